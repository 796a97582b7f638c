//! Baseline (and extended sequential Huffman) JPEG decoder.

use super::dct::idct8x8_fixed;
use super::tables::{canonical_codes, ZIGZAG};
use super::{JpegError, ParseErrorKind};
use crate::RgbImage;

fn err(offset: usize, kind: ParseErrorKind) -> JpegError {
    JpegError::Parse { offset, kind }
}

#[derive(Clone, Debug)]
struct HuffDecoder {
    /// Largest code of each length, or -1.
    maxcode: [i32; 17],
    /// `values` index of the first code of each length minus that code.
    delta: [i32; 17],
    values: Vec<u8>,
}

impl HuffDecoder {
    fn new(bits: &[u8; 16], values: Vec<u8>) -> Self {
        let codes = canonical_codes(bits, values.len());
        let mut maxcode = [-1i32; 17];
        let mut delta = [0i32; 17];
        let mut k = 0usize;
        for len in 1..=16 {
            let n = bits[len - 1] as usize;
            if n > 0 {
                delta[len] = k as i32 - codes[k].0 as i32;
                maxcode[len] = codes[k + n - 1].0 as i32;
                k += n;
            }
        }
        HuffDecoder { maxcode, delta, values }
    }
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    acc: u32,
    n: u32,
    /// Set once a marker is reached inside entropy-coded data.
    marker: Option<(usize, u8)>,
}

impl<'a> BitReader<'a> {
    fn new(data: &'a [u8], pos: usize) -> Self {
        BitReader {
            data,
            pos,
            acc: 0,
            n: 0,
            marker: None,
        }
    }

    fn fill(&mut self) -> Result<(), JpegError> {
        while self.n <= 24 {
            if self.marker.is_some() {
                return Err(err(self.pos, ParseErrorKind::UnexpectedMarker));
            }
            let Some(&b) = self.data.get(self.pos) else {
                return Err(err(self.pos, ParseErrorKind::Truncated));
            };
            if b == 0xFF {
                match self.data.get(self.pos + 1) {
                    Some(0x00) => self.pos += 2,
                    Some(&m) => {
                        self.marker = Some((self.pos, m));
                        if self.n > 0 {
                            return Ok(());
                        }
                        return Err(err(self.pos, ParseErrorKind::UnexpectedMarker));
                    }
                    None => return Err(err(self.pos, ParseErrorKind::Truncated)),
                }
            } else {
                self.pos += 1;
            }
            self.acc = (self.acc << 8) | b as u32;
            self.n += 8;
        }
        Ok(())
    }

    fn bit(&mut self) -> Result<u32, JpegError> {
        if self.n == 0 {
            self.fill()?;
        }
        self.n -= 1;
        Ok((self.acc >> self.n) & 1)
    }

    fn bits(&mut self, count: u32) -> Result<u32, JpegError> {
        if count == 0 {
            return Ok(0);
        }
        if self.n < count {
            self.fill()?;
            if self.n < count {
                let at = self.marker.map_or(self.pos, |m| m.0);
                return Err(err(at, ParseErrorKind::Truncated));
            }
        }
        self.n -= count;
        Ok((self.acc >> self.n) & ((1 << count) - 1))
    }

    fn decode(&mut self, table: &HuffDecoder) -> Result<u8, JpegError> {
        let start = self.pos;
        let mut code = 0i32;
        for len in 1..=16 {
            code = (code << 1) | self.bit()? as i32;
            if code <= table.maxcode[len] {
                return Ok(table.values[(code + table.delta[len]) as usize]);
            }
        }
        Err(err(start, ParseErrorKind::BadHuffmanCode))
    }

    fn receive_extend(&mut self, size: u32) -> Result<i32, JpegError> {
        if size > 16 {
            return Err(err(self.pos, ParseErrorKind::BadHuffmanCode));
        }
        let v = self.bits(size)? as i32;
        Ok(if size > 0 && v < 1 << (size - 1) { v - (1 << size) + 1 } else { v })
    }

    /// Drops buffered bits and consumes the expected restart marker.
    fn restart(&mut self, expected: u8) -> Result<(), JpegError> {
        self.acc = 0;
        self.n = 0;
        let (at, m) = match self.marker.take() {
            Some(found) => found,
            None => {
                let at = self.pos;
                match (self.data.get(at), self.data.get(at + 1)) {
                    (Some(0xFF), Some(&m)) => (at, m),
                    (None, _) | (_, None) => return Err(err(at, ParseErrorKind::Truncated)),
                    _ => return Err(err(at, ParseErrorKind::MissingRestart)),
                }
            }
        };
        if m != 0xD0 + expected {
            return Err(err(at, ParseErrorKind::MissingRestart));
        }
        self.pos = at + 2;
        Ok(())
    }

    /// Offset where the marker following the scan data begins.
    fn end_of_scan(&self) -> usize {
        if let Some((at, _)) = self.marker {
            return at;
        }
        let mut p = self.pos;
        while p + 1 < self.data.len() && !(self.data[p] == 0xFF && self.data[p + 1] != 0x00) {
            p += 1;
        }
        p
    }
}

#[derive(Clone, Debug)]
struct FrameComponent {
    id: u8,
    h: usize,
    v: usize,
    tq: usize,
    /// Block grid extent including MCU padding.
    bw: usize,
    bh: usize,
    /// Dequantized coefficients, natural order, 64 per block.
    coeffs: Vec<i32>,
}

struct Frame {
    width: usize,
    height: usize,
    hmax: usize,
    vmax: usize,
    mcux: usize,
    mcuy: usize,
    components: Vec<FrameComponent>,
}

#[derive(Default)]
struct State {
    qt: [Option<[u16; 64]>; 4],
    dc: [Option<HuffDecoder>; 4],
    ac: [Option<HuffDecoder>; 4],
    restart_interval: usize,
    frame: Option<Frame>,
    scans: usize,
}

fn be16(data: &[u8], at: usize) -> Result<usize, JpegError> {
    match data.get(at..at + 2) {
        Some(b) => Ok(u16::from_be_bytes([b[0], b[1]]) as usize),
        None => Err(err(at.min(data.len()), ParseErrorKind::Truncated)),
    }
}

/// Returns the segment body `[start, end)` for a marker at `at`.
fn segment_body(data: &[u8], at: usize) -> Result<(usize, usize), JpegError> {
    let len = be16(data, at + 2)?;
    if len < 2 {
        return Err(err(at + 2, ParseErrorKind::BadSegment("length below 2".into())));
    }
    let end = at + 2 + len;
    if end > data.len() {
        return Err(err(data.len(), ParseErrorKind::Truncated));
    }
    Ok((at + 4, end))
}

fn parse_dqt(data: &[u8], mut p: usize, end: usize, st: &mut State) -> Result<(), JpegError> {
    while p < end {
        let pq = data[p] >> 4;
        let tq = (data[p] & 15) as usize;
        if tq > 3 || pq > 1 {
            return Err(err(p, ParseErrorKind::BadSegment(format!("quant table byte {:#04x}", data[p]))));
        }
        let size = if pq == 0 { 64 } else { 128 };
        if p + 1 + size > end {
            return Err(err(p, ParseErrorKind::BadSegment("quant table overruns segment".into())));
        }
        let mut t = [0u16; 64];
        for (k, &nat) in ZIGZAG.iter().enumerate() {
            t[nat] = if pq == 0 {
                data[p + 1 + k] as u16
            } else {
                u16::from_be_bytes([data[p + 1 + 2 * k], data[p + 2 + 2 * k]])
            };
        }
        st.qt[tq] = Some(t);
        p += 1 + size;
    }
    Ok(())
}

fn parse_dht(data: &[u8], mut p: usize, end: usize, st: &mut State) -> Result<(), JpegError> {
    while p < end {
        if p + 17 > end {
            return Err(err(p, ParseErrorKind::BadSegment("Huffman table header overruns segment".into())));
        }
        let (tc, th) = (data[p] >> 4, (data[p] & 15) as usize);
        if tc > 1 || th > 3 {
            return Err(err(p, ParseErrorKind::BadSegment(format!("Huffman table byte {:#04x}", data[p]))));
        }
        let bits: [u8; 16] = data[p + 1..p + 17].try_into().expect("16 bytes");
        let n: usize = bits.iter().map(|&b| b as usize).sum();
        if n > 256 || p + 17 + n > end {
            return Err(err(p, ParseErrorKind::BadSegment("Huffman table overruns segment".into())));
        }
        // code space check: no length may hold more codes than remain
        let mut avail = 1u32;
        for &b in &bits {
            avail <<= 1;
            if b as u32 > avail {
                return Err(err(p, ParseErrorKind::BadSegment("over-subscribed Huffman table".into())));
            }
            avail -= b as u32;
        }
        let table = HuffDecoder::new(&bits, data[p + 17..p + 17 + n].to_vec());
        if tc == 0 {
            st.dc[th] = Some(table);
        } else {
            st.ac[th] = Some(table);
        }
        p += 17 + n;
    }
    Ok(())
}

fn parse_sof(data: &[u8], p: usize, end: usize, st: &mut State) -> Result<(), JpegError> {
    if st.frame.is_some() {
        return Err(err(p, ParseErrorKind::BadSegment("second frame header".into())));
    }
    if end - p < 6 {
        return Err(err(p, ParseErrorKind::BadSegment("short frame header".into())));
    }
    if data[p] != 8 {
        return Err(JpegError::Unsupported(format!("{}-bit samples", data[p])));
    }
    let height = be16(data, p + 1)?;
    let width = be16(data, p + 3)?;
    let nc = data[p + 5] as usize;
    if width == 0 || height == 0 {
        return Err(err(p + 1, ParseErrorKind::BadSegment("zero frame dimension".into())));
    }
    if nc != 1 && nc != 3 {
        return Err(JpegError::Unsupported(format!("{nc} components")));
    }
    if end - p != 6 + 3 * nc {
        return Err(err(p, ParseErrorKind::BadSegment("frame header length".into())));
    }
    let mut comps = Vec::with_capacity(nc);
    for i in 0..nc {
        let q = p + 6 + 3 * i;
        let (h, v, tq) = ((data[q + 1] >> 4) as usize, (data[q + 1] & 15) as usize, data[q + 2] as usize);
        if !(1..=4).contains(&h) || !(1..=4).contains(&v) || tq > 3 {
            return Err(err(q, ParseErrorKind::BadSegment("component sampling or table".into())));
        }
        if comps.iter().any(|c: &FrameComponent| c.id == data[q]) {
            return Err(err(q, ParseErrorKind::BadSegment("duplicate component id".into())));
        }
        comps.push(FrameComponent {
            id: data[q],
            h,
            v,
            tq,
            bw: 0,
            bh: 0,
            coeffs: Vec::new(),
        });
    }
    let hmax = comps.iter().map(|c| c.h).max().expect("components");
    let vmax = comps.iter().map(|c| c.v).max().expect("components");
    let mcux = width.div_ceil(8 * hmax);
    let mcuy = height.div_ceil(8 * vmax);
    for c in &mut comps {
        c.bw = mcux * c.h;
        c.bh = mcuy * c.v;
        c.coeffs = vec![0; c.bw * c.bh * 64];
    }
    st.frame = Some(Frame {
        width,
        height,
        hmax,
        vmax,
        mcux,
        mcuy,
        components: comps,
    });
    Ok(())
}

struct ScanComponent {
    index: usize,
    dc: usize,
    ac: usize,
}

fn decode_block(
    r: &mut BitReader,
    dc: &HuffDecoder,
    ac: &HuffDecoder,
    q: &[u16; 64],
    pred: &mut i32,
    out: &mut [i32],
) -> Result<(), JpegError> {
    let s = r.decode(dc)? as u32;
    *pred += r.receive_extend(s)?;
    out[0] = *pred * q[0] as i32;
    let mut k = 1;
    while k < 64 {
        let at = r.pos;
        let rs = r.decode(ac)?;
        let (run, size) = ((rs >> 4) as usize, (rs & 15) as u32);
        if size == 0 {
            if run == 15 {
                k += 16;
                continue;
            }
            break;
        }
        k += run;
        if k > 63 {
            return Err(err(at, ParseErrorKind::BadHuffmanCode));
        }
        let nat = ZIGZAG[k];
        out[nat] = r.receive_extend(size)? * q[nat] as i32;
        k += 1;
    }
    if k > 64 {
        return Err(err(r.pos, ParseErrorKind::BadHuffmanCode));
    }
    Ok(())
}

fn decode_scan(data: &[u8], p: usize, end: usize, st: &mut State) -> Result<usize, JpegError> {
    let Some(frame) = st.frame.as_mut() else {
        return Err(err(p, ParseErrorKind::BadSegment("scan before frame header".into())));
    };
    let ns = data[p] as usize;
    if ns == 0 || ns > 4 || end - p != 1 + 2 * ns + 3 {
        return Err(err(p, ParseErrorKind::BadSegment("scan header length".into())));
    }
    let mut comps = Vec::with_capacity(ns);
    for i in 0..ns {
        let q = p + 1 + 2 * i;
        let Some(index) = frame.components.iter().position(|c| c.id == data[q]) else {
            return Err(err(q, ParseErrorKind::BadSegment(format!("unknown component id {}", data[q]))));
        };
        let (dc, ac) = ((data[q + 1] >> 4) as usize, (data[q + 1] & 15) as usize);
        if dc > 3 || ac > 3 || st.dc[dc].is_none() || st.ac[ac].is_none() {
            return Err(err(q + 1, ParseErrorKind::BadSegment("scan references a missing Huffman table".into())));
        }
        if st.qt[frame.components[index].tq].is_none() {
            return Err(err(q, ParseErrorKind::BadSegment("component references a missing quant table".into())));
        }
        comps.push(ScanComponent { index, dc, ac });
    }
    let q = p + 1 + 2 * ns;
    if data[q] != 0 || data[q + 1] != 63 || data[q + 2] != 0 {
        return Err(JpegError::Unsupported("progressive or partial spectral scan".into()));
    }

    let mut r = BitReader::new(data, end);
    let mut preds = vec![0i32; ns];
    let interval = st.restart_interval;
    let mut next_rst = 0u8;
    let single = ns == 1;
    let (units_x, units_y) = if single {
        let c = &frame.components[comps[0].index];
        (
            (frame.width * c.h).div_ceil(8 * frame.hmax),
            (frame.height * c.v).div_ceil(8 * frame.vmax),
        )
    } else {
        (frame.mcux, frame.mcuy)
    };
    let total = units_x * units_y;
    for unit in 0..total {
        if interval > 0 && unit > 0 && unit % interval == 0 {
            r.restart(next_rst)?;
            next_rst = (next_rst + 1) & 7;
            preds.iter_mut().for_each(|p| *p = 0);
        }
        let (ux, uy) = (unit % units_x, unit / units_x);
        for (si, sc) in comps.iter().enumerate() {
            let c = &mut frame.components[sc.index];
            let qt = st.qt[c.tq].as_ref().expect("checked");
            let (dc, ac) = (st.dc[sc.dc].as_ref().expect("checked"), st.ac[sc.ac].as_ref().expect("checked"));
            let blocks: Vec<(usize, usize)> = if single {
                vec![(ux, uy)]
            } else {
                (0..c.v)
                    .flat_map(|by| (0..c.h).map(move |bx| (bx, by)))
                    .map(|(bx, by)| (ux * c.h + bx, uy * c.v + by))
                    .collect()
            };
            for (bx, by) in blocks {
                let off = (by * c.bw + bx) * 64;
                decode_block(&mut r, dc, ac, qt, &mut preds[si], &mut c.coeffs[off..off + 64])?;
            }
        }
    }
    st.scans += 1;
    Ok(r.end_of_scan())
}

/// Component sample plane at its own resolution, rounded and clamped.
fn reconstruct(c: &FrameComponent) -> Vec<u8> {
    let stride = c.bw * 8;
    let mut plane = vec![0u8; stride * c.bh * 8];
    for by in 0..c.bh {
        for bx in 0..c.bw {
            let off = (by * c.bw + bx) * 64;
            let coeffs: [i32; 64] = c.coeffs[off..off + 64].try_into().expect("64 coefficients");
            let px = idct8x8_fixed(&coeffs);
            for y in 0..8 {
                let row = (by * 8 + y) * stride + bx * 8;
                plane[row..row + 8].copy_from_slice(&px[y * 8..y * 8 + 8]);
            }
        }
    }
    plane
}

/// Triangle-filter upsampling by 2 along one axis, edges replicated.
fn upsample2(src: &[u16], n: usize) -> impl Iterator<Item = u16> + '_ {
    (0..2 * n).map(move |i| {
        let near = src[i / 2];
        let far = if i % 2 == 0 {
            src[(i / 2).saturating_sub(1)]
        } else {
            src[(i / 2 + 1).min(n - 1)]
        };
        (3 * near + far + 2) >> 2
    })
}

/// Brings a component plane to full resolution (`out_w x out_h`).
fn upsample(plane: &[u8], stride: usize, rows: usize, fx: usize, fy: usize, out_w: usize, out_h: usize) -> Vec<u8> {
    let src_w = out_w.div_ceil(fx).min(stride);
    let src_h = out_h.div_ceil(fy).min(rows);
    let mut out = vec![0u8; out_w * out_h];
    match (fx, fy) {
        (1, 1) => {
            for y in 0..out_h {
                out[y * out_w..][..out_w].copy_from_slice(&plane[y * stride..][..out_w]);
            }
        }
        (2, 1) | (1, 2) | (2, 2) => {
            // vertical pass first, then horizontal, rounding after each
            let mut cols = vec![0u16; src_w * src_h * fy];
            for x in 0..src_w {
                let col: Vec<u16> = (0..src_h).map(|y| plane[y * stride + x] as u16).collect();
                if fy == 2 {
                    for (y, v) in upsample2(&col, src_h).enumerate() {
                        cols[y * src_w + x] = v;
                    }
                } else {
                    for (y, &v) in col.iter().enumerate() {
                        cols[y * src_w + x] = v;
                    }
                }
            }
            for y in 0..out_h {
                let row = &cols[y * src_w..][..src_w];
                if fx == 2 {
                    for (x, v) in upsample2(row, src_w).take(out_w).enumerate() {
                        out[y * out_w + x] = v as u8;
                    }
                } else {
                    for x in 0..out_w {
                        out[y * out_w + x] = row[x] as u8;
                    }
                }
            }
        }
        _ => {
            for y in 0..out_h {
                for x in 0..out_w {
                    out[y * out_w + x] = plane[(y / fy).min(rows - 1) * stride + (x / fx).min(stride - 1)];
                }
            }
        }
    }
    out
}

pub fn decode(data: &[u8]) -> Result<RgbImage, JpegError> {
    if data.len() < 2 {
        return Err(err(0, if data.is_empty() { ParseErrorKind::Truncated } else { ParseErrorKind::NotJpeg }));
    }
    if data[0] != 0xFF || data[1] != 0xD8 {
        return Err(err(0, ParseErrorKind::NotJpeg));
    }
    let mut st = State::default();
    let mut p = 2;
    loop {
        let Some(&b) = data.get(p) else {
            return Err(err(p, ParseErrorKind::Truncated));
        };
        if b != 0xFF {
            return Err(err(p, ParseErrorKind::BadMarker(b)));
        }
        let mut m = p + 1;
        while data.get(m) == Some(&0xFF) {
            m += 1;
        }
        let Some(&marker) = data.get(m) else {
            return Err(err(m, ParseErrorKind::Truncated));
        };
        let at = m - 1;
        match marker {
            0xD9 => break,
            0xC0 | 0xC1 => {
                let (s, e) = segment_body(data, at)?;
                parse_sof(data, s, e, &mut st)?;
                p = e;
            }
            0xC2 | 0xC3 | 0xC5..=0xC7 | 0xC9..=0xCB | 0xCD..=0xCF => {
                return Err(JpegError::Unsupported(format!("frame type {marker:#04x}")));
            }
            0xC4 => {
                let (s, e) = segment_body(data, at)?;
                parse_dht(data, s, e, &mut st)?;
                p = e;
            }
            0xDB => {
                let (s, e) = segment_body(data, at)?;
                parse_dqt(data, s, e, &mut st)?;
                p = e;
            }
            0xDD => {
                let (s, e) = segment_body(data, at)?;
                if e - s != 2 {
                    return Err(err(s, ParseErrorKind::BadSegment("restart interval length".into())));
                }
                st.restart_interval = be16(data, s)?;
                p = e;
            }
            0xDA => {
                let (s, e) = segment_body(data, at)?;
                p = decode_scan(data, s, e, &mut st)?;
            }
            0xE0..=0xEF | 0xFE | 0xDC | 0xDE | 0xDF => {
                p = segment_body(data, at)?.1;
            }
            0xD0..=0xD7 | 0x01 => p = m + 1,
            other => return Err(err(at, ParseErrorKind::BadMarker(other))),
        }
    }
    let frame = match st.frame {
        Some(f) if st.scans > 0 => f,
        _ => return Err(err(p, ParseErrorKind::BadSegment("no image data before end of image".into()))),
    };
    let (w, h) = (frame.width, frame.height);
    let planes: Vec<Vec<u8>> = frame
        .components
        .iter()
        .map(|c| {
            let plane = reconstruct(c);
            upsample(&plane, c.bw * 8, c.bh * 8, frame.hmax / c.h, frame.vmax / c.v, w, h)
        })
        .collect();
    let mut rgb = Vec::with_capacity(w * h * 3);
    if planes.len() == 1 {
        for &y in &planes[0] {
            rgb.extend_from_slice(&[y, y, y]);
        }
    } else {
        for i in 0..w * h {
            let y = planes[0][i] as f32;
            let cb = planes[1][i] as f32 - 128.0;
            let cr = planes[2][i] as f32 - 128.0;
            let to8 = |v: f32| v.round().clamp(0.0, 255.0) as u8;
            rgb.push(to8(y + 1.402 * cr));
            rgb.push(to8(y - 0.344_136 * cb - 0.714_136 * cr));
            rgb.push(to8(y + 1.772 * cb));
        }
    }
    Ok(RgbImage::new(w, h, rgb).expect("frame dimensions checked"))
}
