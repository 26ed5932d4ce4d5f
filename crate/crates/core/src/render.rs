//! Deterministic 2D toon rasterizer producing images plus entity label maps.
//!
//! Pixels are sampled at their centres, without anti-aliasing, so the label
//! map is exactly consistent with the painted geometry. Output colors are
//! quantized to the 8-bit grid so that PNG persistence is lossless.

use std::io::Cursor;

use serde::{Deserialize, Serialize};

use crate::scenegen::{catalog, ClassSpace, PartSlot, Primitive, Rgb, SceneSpec};
use crate::{Error, Result};

pub const BACKGROUND_LABEL: u16 = 0;
pub const BODY_LABEL: u16 = 6;
pub const BACKGROUND_OBJECT_BASE: u16 = 100;

/// Draw order of part slots, bottom to top.
pub const PART_Z_ORDER: [PartSlot; 5] = [
    PartSlot::Tail,
    PartSlot::Wing,
    PartSlot::Foot,
    PartSlot::Beak,
    PartSlot::Eye,
];

const OUTLINE_FACTOR: f64 = 0.35;
const SHADING_DEPTH: f64 = 0.35;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub resolution: usize,
    pub background: Rgb,
    pub shading_bands: u32,
    pub outline_width: u32,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            resolution: 64,
            background: [0.80, 0.86, 0.92],
            shading_bands: 3,
            outline_width: 1,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 32 {
            return Err(Error::InvalidArgument(
                "resolution must be at least 32".into(),
            ));
        }
        if self.shading_bands < 1 {
            return Err(Error::InvalidArgument(
                "shading_bands must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Row-major H×W×3 image with channel values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Image {
        Image {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Image {
        Image {
            width,
            height,
            data: vec![value; width * height * 3],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Image> {
        if data.len() != width * height * 3 {
            return Err(Error::Format(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Content hash over dimensions and exact channel bits.
    pub fn fingerprint(&self) -> u64 {
        let dims = [self.width as u64, self.height as u64];
        let bytes = dims
            .iter()
            .flat_map(|d| d.to_le_bytes())
            .chain(self.data.iter().flat_map(|v| v.to_bits().to_le_bytes()));
        crate::seed::hash_bytes(bytes)
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        encode_png(self.width, self.height, png::ColorType::Rgb, &bytes)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Image> {
        let (w, h, color, raw) = decode_png(bytes)?;
        if color != png::ColorType::Rgb {
            return Err(Error::Format(format!("expected RGB PNG, got {color:?}")));
        }
        Ok(Image {
            width: w,
            height: h,
            data: raw.into_iter().map(|b| b as f32 / 255.0).collect(),
        })
    }
}

/// Per-pixel entity labels: 0 background, 1..=5 part slots, 6 body,
/// 100+k background object k.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
}

impl PartMap {
    pub fn label_at(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    pub fn count(&self, label: u16) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let bytes: Vec<u8> = self.labels.iter().map(|&l| (l % 256) as u8).collect();
        encode_png(self.width, self.height, png::ColorType::Grayscale, &bytes)
    }

    pub fn from_png(bytes: &[u8]) -> Result<PartMap> {
        let (w, h, color, raw) = decode_png(bytes)?;
        if color != png::ColorType::Grayscale {
            return Err(Error::Format(format!(
                "expected grayscale PNG, got {color:?}"
            )));
        }
        Ok(PartMap {
            width: w,
            height: h,
            labels: raw.into_iter().map(u16::from).collect(),
        })
    }
}

pub fn background_object_label(object_id: u32) -> u16 {
    BACKGROUND_OBJECT_BASE + object_id as u16
}

fn encode_png(w: usize, h: usize, color: png::ColorType, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png encode: {e}")))?;
        writer
            .write_image_data(bytes)
            .map_err(|e| Error::Format(format!("png encode: {e}")))?;
    }
    Ok(out)
}

fn decode_png(bytes: &[u8]) -> Result<(usize, usize, png::ColorType, Vec<u8>)> {
    let fmt = |e: png::DecodingError| Error::Format(format!("png decode: {e}"));
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(fmt)?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format("expected 8-bit PNG".into()));
    }
    buf.truncate(info.buffer_size());
    Ok((
        info.width as usize,
        info.height as usize,
        info.color_type,
        buf,
    ))
}

/// Binary H×W mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Mask {
        Mask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

pub fn part_mask(map: &PartMap, entity_label: u16) -> Mask {
    Mask {
        width: map.width,
        height: map.height,
        bits: map.labels.iter().map(|&l| l == entity_label).collect(),
    }
}

/// Dilation with a `kernel_px`×`kernel_px` square structuring element.
pub fn dilate_mask(mask: &Mask, kernel_px: usize) -> Result<Mask> {
    if kernel_px == 0 || kernel_px.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "dilation kernel must be odd and positive, got {kernel_px}"
        )));
    }
    let r = kernel_px / 2;
    let (w, h) = (mask.width, mask.height);
    // separable: horizontal max then vertical max
    let mut rows = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = (lo..=hi).any(|xx| mask.bits[y * w + xx]);
        }
    }
    let mut out = Mask::new(w, h);
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            out.bits[y * w + x] = (lo..=hi).any(|yy| rows[yy * w + x]);
        }
    }
    Ok(out)
}

/// How a primitive's coordinates map to the image.
#[derive(Clone, Copy)]
enum Frame<'a> {
    /// Bird-local coordinates under the scene viewpoint.
    Bird(&'a crate::scenegen::Viewpoint),
    /// Image-fraction coordinates.
    Image,
}

impl Frame<'_> {
    fn shape_point(&self, frac: [f64; 2]) -> [f64; 2] {
        match self {
            Frame::Bird(v) => v.frac_to_local(frac),
            Frame::Image => frac,
        }
    }

    fn frac_bounds(&self, prim: &Primitive) -> [f64; 4] {
        match self {
            Frame::Bird(v) => v.frac_bounds(prim),
            Frame::Image => prim.bounds(),
        }
    }
}

/// Pixels covered by one primitive, over a padded pixel window.
struct Coverage {
    x0: i64,
    y0: i64,
    w: usize,
    h: usize,
    bits: Vec<bool>,
    /// Pixel-space vertical extent of the primitive, used for band shading.
    top: f64,
    bottom: f64,
}

impl Coverage {
    fn compute(prim: &Primitive, frame: Frame<'_>, res: usize, pad: usize) -> Coverage {
        let resf = res as f64;
        let b = frame.frac_bounds(prim);
        let pad = pad as i64;
        let x0 = ((b[0] * resf).floor() as i64 - 1).max(0) - pad;
        let y0 = ((b[1] * resf).floor() as i64 - 1).max(0) - pad;
        let x1 = ((b[2] * resf).ceil() as i64 + 1).min(res as i64) + pad;
        let y1 = ((b[3] * resf).ceil() as i64 + 1).min(res as i64) + pad;
        let w = (x1 - x0).max(0) as usize;
        let h = (y1 - y0).max(0) as usize;
        let mut bits = vec![false; w * h];
        for j in 0..h {
            for i in 0..w {
                let px = (x0 + i as i64) as f64 + 0.5;
                let py = (y0 + j as i64) as f64 + 0.5;
                bits[j * w + i] = prim.contains(frame.shape_point([px / resf, py / resf]));
            }
        }
        Coverage {
            x0,
            y0,
            w,
            h,
            bits,
            top: b[1] * resf,
            bottom: b[3] * resf,
        }
    }

    fn covered(&self, x: i64, y: i64) -> bool {
        let i = x - self.x0;
        let j = y - self.y0;
        i >= 0
            && j >= 0
            && (i as usize) < self.w
            && (j as usize) < self.h
            && self.bits[j as usize * self.w + i as usize]
    }

    fn is_outline(&self, x: i64, y: i64, width: i64) -> bool {
        (-width..=width).any(|dy| (-width..=width).any(|dx| !self.covered(x + dx, y + dy)))
    }

    /// In-image covered pixels.
    fn pixels(&self, res: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.h).flat_map(move |j| {
            (0..self.w).filter_map(move |i| {
                let x = self.x0 + i as i64;
                let y = self.y0 + j as i64;
                (x >= 0
                    && y >= 0
                    && (x as usize) < res
                    && (y as usize) < res
                    && self.bits[j * self.w + i])
                    .then_some((x as usize, y as usize))
            })
        })
    }
}

/// One drawable entity: label, color and primitives in some frame.
struct Entity<'a> {
    label: u16,
    color: Rgb,
    primitives: &'a [Primitive],
    frame: Frame<'a>,
}

fn entities<'a>(
    space: &ClassSpace,
    scene: &'a SceneSpec,
    bg_prims: &'a [Vec<Primitive>],
) -> Vec<Entity<'a>> {
    let cat = catalog();
    let class = space.class(scene.class_id);
    let mut out = Vec::new();
    for (obj, prims) in scene.background_objects.iter().zip(bg_prims) {
        out.push(Entity {
            label: background_object_label(obj.object_id),
            color: obj.color,
            primitives: prims,
            frame: Frame::Image,
        });
    }
    out.push(Entity {
        label: BODY_LABEL,
        color: cat.body_color,
        primitives: &cat.body,
        frame: Frame::Bird(&scene.viewpoint),
    });
    for slot in PART_Z_ORDER {
        if scene.present_parts.contains(slot) {
            let v = cat.variant(slot, class.variant(slot));
            out.push(Entity {
                label: slot.label(),
                color: v.color,
                primitives: &v.primitives,
                frame: Frame::Bird(&scene.viewpoint),
            });
        }
    }
    out
}

fn quantize(v: f64) -> f32 {
    ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
}

pub fn render_scene(space: &ClassSpace, scene: &SceneSpec, cfg: &RenderConfig) -> (Image, PartMap) {
    let res = cfg.resolution;
    let illum = scene.illumination;
    let bands = cfg.shading_bands.max(1);
    let outline = cfg.outline_width as i64;

    let mut color = vec![0f64; res * res * 3];
    for px in color.chunks_exact_mut(3) {
        for (v, bg) in px.iter_mut().zip(cfg.background) {
            *v = bg * illum;
        }
    }
    let mut labels = vec![BACKGROUND_LABEL; res * res];

    let bg_prims: Vec<Vec<Primitive>> = scene
        .background_objects
        .iter()
        .map(|o| vec![o.primitive()])
        .collect();

    for ent in entities(space, scene, &bg_prims) {
        for prim in ent.primitives {
            let cov = Coverage::compute(prim, ent.frame, res, cfg.outline_width as usize);
            let span = (cov.bottom - cov.top).max(1e-9);
            for (x, y) in cov.pixels(res) {
                let mut factor = if bands > 1 {
                    let t = ((y as f64 + 0.5 - cov.top) / span).clamp(0.0, 0.999_999);
                    let band = (t * bands as f64).floor();
                    1.0 - SHADING_DEPTH * band / (bands - 1) as f64
                } else {
                    1.0
                };
                if outline > 0 && cov.is_outline(x as i64, y as i64, outline) {
                    factor *= OUTLINE_FACTOR;
                }
                let idx = y * res + x;
                for c in 0..3 {
                    color[idx * 3 + c] = ent.color[c] * factor * illum;
                }
                labels[idx] = ent.label;
            }
        }
    }

    let image = Image {
        width: res,
        height: res,
        data: color.into_iter().map(quantize).collect(),
    };
    let map = PartMap {
        width: res,
        height: res,
        labels,
    };
    (image, map)
}

/// Pixels covered by an entity's geometry, ignoring occlusion. Empty when the
/// entity is absent from the scene.
pub fn entity_footprint(
    space: &ClassSpace,
    scene: &SceneSpec,
    cfg: &RenderConfig,
    label: u16,
) -> Mask {
    let res = cfg.resolution;
    let mut mask = Mask::new(res, res);
    let bg_prims: Vec<Vec<Primitive>> = scene
        .background_objects
        .iter()
        .map(|o| vec![o.primitive()])
        .collect();
    for ent in entities(space, scene, &bg_prims)
        .into_iter()
        .filter(|e| e.label == label)
    {
        for prim in ent.primitives {
            let cov = Coverage::compute(prim, ent.frame, res, 0);
            for (x, y) in cov.pixels(res) {
                mask.bits[y * res + x] = true;
            }
        }
    }
    mask
}
