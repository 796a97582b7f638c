use super::dct::Dct8;
use super::tables::{canonical_codes, quant_tables_for_quality, HuffmanSpec, AC_CHROMA, AC_LUMA, DC_CHROMA, DC_LUMA, ZIGZAG};
use super::{JpegError, JpegStream};
use crate::RgbImage;

struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    n: u32,
}

impl BitWriter {
    fn new(out: Vec<u8>) -> Self {
        BitWriter { out, acc: 0, n: 0 }
    }

    fn put(&mut self, code: u32, len: u32) {
        debug_assert!(len <= 16);
        self.acc = (self.acc << len) | (code & ((1 << len) - 1));
        self.n += len;
        while self.n >= 8 {
            let byte = (self.acc >> (self.n - 8)) as u8;
            self.out.push(byte);
            if byte == 0xFF {
                self.out.push(0x00);
            }
            self.n -= 8;
        }
        self.acc &= (1 << self.n) - 1;
    }

    /// Pads the last partial byte with one bits.
    fn finish(mut self) -> Vec<u8> {
        if self.n > 0 {
            let pad = 8 - self.n;
            self.put((1 << pad) - 1, pad);
        }
        self.out
    }
}

struct HuffEncoder {
    /// `(code, length)` indexed by symbol.
    codes: [(u16, u8); 256],
}

impl HuffEncoder {
    fn new(spec: &HuffmanSpec) -> Self {
        let mut codes = [(0, 0); 256];
        for (&sym, code) in spec.values.iter().zip(canonical_codes(&spec.bits, spec.values.len())) {
            codes[sym as usize] = code;
        }
        HuffEncoder { codes }
    }

    fn emit(&self, w: &mut BitWriter, sym: u8) {
        let (code, len) = self.codes[sym as usize];
        debug_assert!(len > 0, "symbol {sym:#x} has no code");
        w.put(code as u32, len as u32);
    }
}

/// Magnitude category and the low-order bits that encode `v` within it.
fn category(v: i32) -> (u32, u32) {
    let size = 32 - v.unsigned_abs().leading_zeros();
    let bits = if v < 0 { (v - 1) as u32 } else { v as u32 };
    (size, bits & ((1u32 << size) - 1))
}

struct Component<'a> {
    dc: HuffEncoder,
    ac: HuffEncoder,
    quant: &'a [u16; 64],
    pred: i32,
}

fn encode_block(w: &mut BitWriter, comp: &mut Component, dct: &Dct8<f32>, samples: &[f32; 64]) {
    let coeffs = dct.forward(samples);
    let mut zz = [0i32; 64];
    for (k, &nat) in ZIGZAG.iter().enumerate() {
        zz[k] = (coeffs[nat] / comp.quant[nat] as f32).round() as i32;
    }
    let diff = zz[0] - comp.pred;
    comp.pred = zz[0];
    let (size, bits) = category(diff);
    comp.dc.emit(w, size as u8);
    if size > 0 {
        w.put(bits, size);
    }
    let mut run = 0u32;
    for &v in &zz[1..] {
        if v == 0 {
            run += 1;
            continue;
        }
        while run >= 16 {
            comp.ac.emit(w, 0xF0);
            run -= 16;
        }
        let (size, bits) = category(v);
        comp.ac.emit(w, ((run << 4) | size) as u8);
        w.put(bits, size);
        run = 0;
    }
    if run > 0 {
        comp.ac.emit(w, 0x00);
    }
}

fn segment(out: &mut Vec<u8>, marker: u8, body: &[u8]) {
    out.extend_from_slice(&[0xFF, marker]);
    out.extend_from_slice(&((body.len() + 2) as u16).to_be_bytes());
    out.extend_from_slice(body);
}

fn dht_body(out: &mut Vec<u8>, class_id: u8, spec: &HuffmanSpec) {
    out.push(class_id);
    out.extend_from_slice(&spec.bits);
    out.extend_from_slice(spec.values);
}

/// Full-range BT.601 YCbCr planes, each edge-replicated to `pw x ph`.
fn ycbcr_planes(image: &RgbImage, pw: usize, ph: usize) -> [Vec<f32>; 3] {
    let (w, h) = image.dims();
    let mut planes = [vec![0f32; pw * ph], vec![0f32; pw * ph], vec![0f32; pw * ph]];
    for y in 0..ph {
        for x in 0..pw {
            let [r, g, b] = image.pixel(x.min(w - 1), y.min(h - 1)).map(f32::from);
            let i = y * pw + x;
            planes[0][i] = 0.299 * r + 0.587 * g + 0.114 * b;
            planes[1][i] = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0;
            planes[2][i] = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0;
        }
    }
    planes
}

fn subsample(plane: &[f32], pw: usize, ph: usize) -> Vec<f32> {
    let (cw, ch) = (pw / 2, ph / 2);
    let mut out = vec![0f32; cw * ch];
    for y in 0..ch {
        for x in 0..cw {
            let at = |dx: usize, dy: usize| plane[(2 * y + dy) * pw + 2 * x + dx];
            out[y * cw + x] = (at(0, 0) + at(1, 0) + at(0, 1) + at(1, 1)) * 0.25;
        }
    }
    out
}

fn load_block(plane: &[f32], stride: usize, bx: usize, by: usize) -> [f32; 64] {
    std::array::from_fn(|i| plane[(by * 8 + i / 8) * stride + bx * 8 + i % 8] - 128.0)
}

/// Baseline JFIF at quality `quality` with 4:2:0 chroma and the Annex K
/// Huffman tables. Deterministic in `(image, quality)`.
pub fn encode(image: &RgbImage, quality: u8) -> Result<JpegStream, JpegError> {
    let q = quant_tables_for_quality(quality)?;
    let (w, h) = image.dims();
    if w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(JpegError::Unsupported(format!("{w}x{h} exceeds the 65535 pixel frame limit")));
    }
    let (pw, ph) = (w.div_ceil(16) * 16, h.div_ceil(16) * 16);
    let [yp, cbp, crp] = ycbcr_planes(image, pw, ph);
    let (cb, cr) = (subsample(&cbp, pw, ph), subsample(&crp, pw, ph));

    let mut out = Vec::with_capacity(w * h / 4 + 1024);
    out.extend_from_slice(&[0xFF, 0xD8]);
    segment(&mut out, 0xE0, &[b'J', b'F', b'I', b'F', 0, 1, 1, 0, 0, 1, 0, 1, 0, 0]);
    let mut dqt = Vec::with_capacity(130);
    for (id, table) in [(0u8, &q.luma), (1, &q.chroma)] {
        dqt.push(id);
        dqt.extend(ZIGZAG.iter().map(|&nat| table[nat] as u8));
    }
    segment(&mut out, 0xDB, &dqt);
    let mut sof = vec![8];
    sof.extend_from_slice(&(h as u16).to_be_bytes());
    sof.extend_from_slice(&(w as u16).to_be_bytes());
    sof.extend_from_slice(&[3, 1, 0x22, 0, 2, 0x11, 1, 3, 0x11, 1]);
    segment(&mut out, 0xC0, &sof);
    let mut dht = Vec::new();
    dht_body(&mut dht, 0x00, &DC_LUMA);
    dht_body(&mut dht, 0x10, &AC_LUMA);
    dht_body(&mut dht, 0x01, &DC_CHROMA);
    dht_body(&mut dht, 0x11, &AC_CHROMA);
    segment(&mut out, 0xC4, &dht);
    segment(&mut out, 0xDA, &[3, 1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0]);

    let dct = Dct8::<f32>::new();
    let mut luma = Component {
        dc: HuffEncoder::new(&DC_LUMA),
        ac: HuffEncoder::new(&AC_LUMA),
        quant: &q.luma,
        pred: 0,
    };
    let mut chroma = [&q.chroma, &q.chroma].map(|quant| Component {
        dc: HuffEncoder::new(&DC_CHROMA),
        ac: HuffEncoder::new(&AC_CHROMA),
        quant,
        pred: 0,
    });
    let mut bits = BitWriter::new(out);
    let cw = pw / 2;
    for my in 0..ph / 16 {
        for mx in 0..pw / 16 {
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                encode_block(&mut bits, &mut luma, &dct, &load_block(&yp, pw, mx * 2 + dx, my * 2 + dy));
            }
            encode_block(&mut bits, &mut chroma[0], &dct, &load_block(&cb, cw, mx, my));
            encode_block(&mut bits, &mut chroma[1], &dct, &load_block(&cr, cw, mx, my));
        }
    }
    let mut out = bits.finish();
    out.extend_from_slice(&[0xFF, 0xD9]);
    Ok(JpegStream::from_bytes(out))
}
