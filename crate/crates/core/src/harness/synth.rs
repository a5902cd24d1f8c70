//! Synthetic vehicle scenes: textured backgrounds with one to four drawn
//! vehicles whose color and body template fully determine their tags.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::det::BBox;
use crate::error::{Error, Result};
use crate::harness::ap::GroundTruth;
use crate::tensor::Tensor;
use crate::vatt2vec::AttributeSchema;

pub const CLASSES: [&str; 3] = ["car", "bus", "truck"];
pub const ANNOTATION_FORMAT: &str = "vfmdet-annotations";
pub const ANNOTATION_VERSION: u32 = 1;

/// sRGB of each Color tag, in schema order.
const PALETTE: [[u8; 3]; 11] = [
    [20, 20, 24],
    [240, 240, 236],
    [210, 30, 35],
    [30, 70, 210],
    [40, 170, 60],
    [120, 72, 36],
    [40, 200, 210],
    [235, 215, 40],
    [200, 160, 50],
    [185, 190, 198],
    [110, 112, 116],
];

/// Per body model: aspect (w/h), cabin window span as fractions of width,
/// cabin height fraction, window pane count, wheel centres as fractions of
/// width, then displacement, top speed, doors, seats (in-group tag indices).
struct Template {
    aspect: f64,
    cabin: (f64, f64),
    cabin_h: f64,
    panes: usize,
    wheels: (f64, f64),
    displacement: usize,
    speed: usize,
    doors: usize,
    seats: usize,
}

const TEMPLATES: [Template; 12] = [
    // MPV
    Template { aspect: 1.9, cabin: (0.1, 0.9), cabin_h: 0.45, panes: 3, wheels: (0.16, 0.84), displacement: 2, speed: 2, doors: 4, seats: 6 },
    // SUV
    Template { aspect: 1.7, cabin: (0.15, 0.7), cabin_h: 0.42, panes: 2, wheels: (0.22, 0.78), displacement: 3, speed: 2, doors: 4, seats: 4 },
    // Sedan
    Template { aspect: 2.4, cabin: (0.3, 0.7), cabin_h: 0.35, panes: 2, wheels: (0.2, 0.8), displacement: 2, speed: 2, doors: 3, seats: 4 },
    // Hatchback
    Template { aspect: 2.0, cabin: (0.35, 0.97), cabin_h: 0.4, panes: 2, wheels: (0.15, 0.85), displacement: 1, speed: 1, doors: 4, seats: 4 },
    // Minibus
    Template { aspect: 2.2, cabin: (0.02, 0.98), cabin_h: 0.3, panes: 4, wheels: (0.12, 0.88), displacement: 3, speed: 1, doors: 3, seats: 9 },
    // Fastback
    Template { aspect: 2.5, cabin: (0.4, 0.85), cabin_h: 0.28, panes: 1, wheels: (0.2, 0.8), displacement: 2, speed: 3, doors: 1, seats: 3 },
    // Estate
    Template { aspect: 2.6, cabin: (0.2, 0.98), cabin_h: 0.35, panes: 3, wheels: (0.2, 0.82), displacement: 2, speed: 2, doors: 4, seats: 4 },
    // Pickup
    Template { aspect: 2.3, cabin: (0.05, 0.4), cabin_h: 0.45, panes: 1, wheels: (0.18, 0.78), displacement: 3, speed: 1, doors: 3, seats: 4 },
    // Hardtop Convertible
    Template { aspect: 2.3, cabin: (0.45, 0.65), cabin_h: 0.25, panes: 1, wheels: (0.22, 0.78), displacement: 2, speed: 3, doors: 1, seats: 1 },
    // Sports
    Template { aspect: 2.8, cabin: (0.55, 0.8), cabin_h: 0.2, panes: 1, wheels: (0.25, 0.75), displacement: 3, speed: 4, doors: 1, seats: 1 },
    // Crossover
    Template { aspect: 1.8, cabin: (0.03, 0.6), cabin_h: 0.35, panes: 2, wheels: (0.2, 0.75), displacement: 2, speed: 2, doors: 4, seats: 4 },
    // Convertible
    Template { aspect: 2.4, cabin: (0.4, 0.5), cabin_h: 0.15, panes: 1, wheels: (0.2, 0.8), displacement: 1, speed: 3, doors: 1, seats: 3 },
];

const CAR_MODELS: [usize; 10] = [0, 1, 2, 3, 5, 6, 8, 9, 10, 11];

/// Object class implied by a Model tag index.
pub fn class_of_model(model: usize) -> usize {
    match model {
        4 => 1,
        7 => 2,
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub bbox: BBox,
    pub class: String,
    /// One in-group tag name per schema group, in group order.
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: usize,
    /// Relative to the dataset directory.
    pub file: String,
    pub width: usize,
    pub height: usize,
    pub objects: Vec<ObjectRecord>,
}

#[derive(Serialize, Deserialize)]
struct AnnotationHeader {
    format: String,
    version: u32,
}

/// One loaded image with its annotation.
#[derive(Debug, Clone)]
pub struct Sample {
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor,
    pub record: AnnotationRecord,
    pub gt_boxes: Vec<BBox>,
    pub gt_classes: Vec<usize>,
    /// Per object, flat schema indices for the six groups.
    pub gt_attributes: Vec<Vec<usize>>,
}

impl Sample {
    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            boxes: self.gt_boxes.clone(),
            class_ids: self.gt_classes.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_images: usize,
    pub image_side: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object width range in pixels.
    pub min_width: f64,
    pub max_width: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_images: 20,
            image_side: 64,
            min_objects: 1,
            max_objects: 4,
            min_width: 18.0,
            max_width: 40.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_images == 0 || self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::Config("synthetic data needs images and 1 <= min_objects <= max_objects".into()));
        }
        if !(4.0 <= self.min_width && self.min_width <= self.max_width && self.max_width < self.image_side as f64) {
            return Err(Error::Config("object widths must satisfy 4 <= min <= max < image_side".into()));
        }
        Ok(())
    }
}

/// RGB8 canvas.
struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn fill_rect(&mut self, b: &BBox, rgb: [u8; 3]) {
        let (x0, y0) = (b.x1.round().max(0.0) as usize, b.y1.round().max(0.0) as usize);
        let (x1, y1) = ((b.x2.round() as usize).min(self.w), (b.y2.round() as usize).min(self.h));
        for y in y0..y1 {
            for x in x0..x1 {
                self.px[(y * self.w + x) * 3..][..3].copy_from_slice(&rgb);
            }
        }
    }

    fn fill_disc(&mut self, cx: f64, cy: f64, r: f64, rgb: [u8; 3]) {
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(self.w));
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(self.h));
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= r * r {
                    self.px[(y * self.w + x) * 3..][..3].copy_from_slice(&rgb);
                }
            }
        }
    }

    fn to_tensor(&self) -> Tensor {
        let n = self.w * self.h;
        let mut data = vec![0.0; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                data[c * n + i] = self.px[i * 3 + c] as f64 / 255.0;
            }
        }
        Tensor::from_vec(data, &[3, self.h, self.w]).expect("nonempty canvas")
    }
}

fn background(rng: &mut ChaCha8Rng, side: usize) -> Canvas {
    let base: [f64; 3] = [rng.random_range(60.0..140.0), rng.random_range(60.0..140.0), rng.random_range(60.0..140.0)];
    let tilt = rng.random_range(-0.6..0.6);
    let mut px = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let shade = tilt * (x as f64 - y as f64) * 0.5;
            for b in base {
                let v = b + shade + rng.random_range(-12.0..12.0);
                px.push(v.clamp(0.0, 255.0) as u8);
            }
        }
    }
    Canvas { w: side, h: side, px }
}

fn draw_vehicle(canvas: &mut Canvas, b: &BBox, color: usize, model: usize) {
    let t = &TEMPLATES[model];
    let (w, h) = (b.width(), b.height());
    let body = BBox::new(b.x1, b.y1 + h * t.cabin_h, b.x2, b.y2 - h * 0.15);
    canvas.fill_rect(&body, PALETTE[color]);
    let window = [70u8, 95, 120];
    let cabin = BBox::new(b.x1 + w * t.cabin.0, b.y1, b.x1 + w * t.cabin.1, b.y1 + h * t.cabin_h + 1.0);
    canvas.fill_rect(&cabin, PALETTE[color]);
    let inset = (h * 0.08).max(1.0);
    let glass = BBox::new(cabin.x1 + inset, cabin.y1 + inset, cabin.x2 - inset, cabin.y2 - inset);
    canvas.fill_rect(&glass, window);
    let pane = glass.width() / t.panes as f64;
    for k in 1..t.panes {
        let x = glass.x1 + pane * k as f64;
        canvas.fill_rect(&BBox::new(x - inset * 0.5, glass.y1, x + inset * 0.5, glass.y2), PALETTE[color]);
    }
    let r = h * 0.15;
    for fx in [t.wheels.0, t.wheels.1] {
        canvas.fill_disc(b.x1 + w * fx, b.y2 - r, r, [15, 15, 15]);
    }
}

fn tags_for(schema: &AttributeSchema, color: usize, model: usize) -> Vec<String> {
    let t = &TEMPLATES[model];
    [color, model, t.displacement, t.speed, t.doors, t.seats]
        .iter()
        .zip(&schema.groups)
        .map(|(&i, g)| g.tags[i].clone())
        .collect()
}

/// Deterministic scene `index` of the dataset seeded by `seed`. `model`
/// pins the body template of every object.
fn render_scene(seed: u64, index: usize, cfg: &SynthConfig, schema: &AttributeSchema, model: Option<usize>) -> (Canvas, Vec<ObjectRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let side = cfg.image_side as f64;
    let mut canvas = background(&mut rng, cfg.image_side);
    let target = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut objects: Vec<ObjectRecord> = Vec::new();
    let mut attempts = 0;
    while objects.len() < target && attempts < 200 {
        attempts += 1;
        let (class, model) = match model {
            Some(m) => (class_of_model(m), m),
            None => {
                let class = rng.random_range(0..CLASSES.len());
                let m = match class {
                    1 => 4,
                    2 => 7,
                    _ => CAR_MODELS[rng.random_range(0..CAR_MODELS.len())],
                };
                (class, m)
            }
        };
        let color = rng.random_range(0..PALETTE.len());
        let w = rng.random_range(cfg.min_width..=cfg.max_width);
        let h = (w / TEMPLATES[model].aspect).max(4.0);
        let x = rng.random_range(0.0..=(side - w)).floor();
        let y = rng.random_range(0.0..=(side - h)).floor();
        let bbox = BBox::new(x, y, (x + w).round().min(side), (y + h).round().min(side));
        if objects.iter().any(|o| o.bbox.intersection(&bbox) > 0.0) {
            continue;
        }
        draw_vehicle(&mut canvas, &bbox, color, model);
        objects.push(ObjectRecord {
            bbox,
            class: CLASSES[class].to_string(),
            attributes: tags_for(schema, color, model),
        });
    }
    (canvas, objects)
}

fn sample_from(canvas: &Canvas, record: AnnotationRecord, schema: &AttributeSchema) -> Result<Sample> {
    let mut gt_classes = Vec::new();
    let mut gt_attributes = Vec::new();
    for o in &record.objects {
        let c = CLASSES
            .iter()
            .position(|&k| k == o.class)
            .ok_or_else(|| Error::Schema(format!("unknown class `{}`", o.class)))?;
        gt_classes.push(c);
        gt_attributes.push(attribute_indices(schema, &o.attributes)?);
        if !(o.bbox.is_valid() && o.bbox.x1 >= 0.0 && o.bbox.y1 >= 0.0 && o.bbox.x2 <= record.width as f64 && o.bbox.y2 <= record.height as f64) {
            return Err(Error::Schema(format!("box {:?} outside image {}", o.bbox, record.image_id)));
        }
    }
    Ok(Sample {
        image: canvas.to_tensor(),
        gt_boxes: record.objects.iter().map(|o| o.bbox).collect(),
        record,
        gt_classes,
        gt_attributes,
    })
}

/// Flat schema indices of six in-group tag names.
pub fn attribute_indices(schema: &AttributeSchema, tags: &[String]) -> Result<Vec<usize>> {
    if tags.len() != schema.num_groups() {
        return Err(Error::Schema(format!("expected {} attribute tags, got {}", schema.num_groups(), tags.len())));
    }
    tags.iter()
        .enumerate()
        .map(|(g, t)| {
            schema
                .tag_index(g, t)
                .ok_or_else(|| Error::Schema(format!("`{t}` is not a tag of group `{}`", schema.groups[g].name)))
        })
        .collect()
}

/// A scene holding one vehicle of body template `model` and palette entry
/// `color` at `bbox`, on a background drawn from `seed`.
pub fn single_vehicle_scene(seed: u64, side: usize, bbox: BBox, color: usize, model: usize, schema: &AttributeSchema) -> Result<Sample> {
    if color >= PALETTE.len() || model >= TEMPLATES.len() {
        return Err(Error::InvalidArgument(format!("no palette entry {color} or body template {model}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut canvas = background(&mut rng, side);
    draw_vehicle(&mut canvas, &bbox, color, model);
    let record = AnnotationRecord {
        image_id: 0,
        file: String::new(),
        width: side,
        height: side,
        objects: vec![ObjectRecord {
            bbox,
            class: CLASSES[class_of_model(model)].to_string(),
            attributes: tags_for(schema, color, model),
        }],
    };
    sample_from(&canvas, record, schema)
}

/// Builds the whole dataset in memory.
pub fn generate_samples(seed: u64, cfg: &SynthConfig, schema: &AttributeSchema) -> Result<Vec<Sample>> {
    cfg.validate()?;
    (0..cfg.num_images)
        .map(|i| {
            let (canvas, objects) = render_scene(seed, i, cfg, schema, None);
            let record = AnnotationRecord {
                image_id: i,
                file: format!("images/{i:05}.png"),
                width: cfg.image_side,
                height: cfg.image_side,
                objects,
            };
            sample_from(&canvas, record, schema)
        })
        .collect()
}

fn encode_png(path: &Path, canvas: &Canvas) -> Result<()> {
    let img = image::RgbImage::from_raw(canvas.w as u32, canvas.h as u32, canvas.px.clone()).expect("buffer matches dims");
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes PNG images and `annotations.jsonl` (version header, then one
/// record per image). Returns the annotation file path.
pub fn generate_synthetic_dataset(dir: &Path, seed: u64, cfg: &SynthConfig, schema: &AttributeSchema) -> Result<PathBuf> {
    cfg.validate()?;
    fs::create_dir_all(dir.join("images"))?;
    let ann = dir.join("annotations.jsonl");
    let mut out = std::io::BufWriter::new(fs::File::create(&ann)?);
    let header = AnnotationHeader {
        format: ANNOTATION_FORMAT.into(),
        version: ANNOTATION_VERSION,
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for i in 0..cfg.num_images {
        let (canvas, objects) = render_scene(seed, i, cfg, schema, None);
        let record = AnnotationRecord {
            image_id: i,
            file: format!("images/{i:05}.png"),
            width: cfg.image_side,
            height: cfg.image_side,
            objects,
        };
        encode_png(&dir.join(&record.file), &canvas)?;
        writeln!(out, "{}", serde_json::to_string(&record)?)?;
    }
    out.flush()?;
    Ok(ann)
}

/// Reads an RGB PNG as a `[3, H, W]` tensor in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let canvas = Canvas {
        w: img.width() as usize,
        h: img.height() as usize,
        px: img.into_raw(),
    };
    Ok(canvas.to_tensor())
}

/// Writes a `[3, H, W]` tensor in `[0, 1]` as PNG.
pub fn save_image(path: &Path, image: &Tensor) -> Result<()> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let n = h * w;
    let d = image.data();
    let px = (0..n)
        .flat_map(|i| (0..3).map(move |c| (d[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    encode_png(path, &Canvas { w, h, px })
}

/// Loads a dataset written by [`generate_synthetic_dataset`].
pub fn load_dataset(dir: &Path, schema: &AttributeSchema) -> Result<Vec<Sample>> {
    let ann = dir.join("annotations.jsonl");
    let file = fs::File::open(&ann).map_err(|e| Error::Format {
        path: ann.clone(),
        message: e.to_string(),
    })?;
    let mut lines = BufReader::new(file).lines();
    let format_err = |message: String| Error::Format {
        path: ann.clone(),
        message,
    };
    let header: AnnotationHeader = match lines.next() {
        Some(l) => serde_json::from_str(&l?).map_err(|e| format_err(format!("bad header: {e}")))?,
        None => return Err(format_err("empty annotation file".into())),
    };
    if header.format != ANNOTATION_FORMAT {
        return Err(format_err(format!("unexpected format `{}`", header.format)));
    }
    if header.version != ANNOTATION_VERSION {
        return Err(Error::Version {
            path: ann.clone(),
            found: header.version,
            expected: ANNOTATION_VERSION,
        });
    }
    let mut samples = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord = serde_json::from_str(&line).map_err(|e| format_err(format!("record {}: {e}", n + 1)))?;
        let image = load_image(&dir.join(&record.file))?;
        if image.shape() != [3, record.height, record.width] {
            return Err(format_err(format!("image {} does not match its recorded size", record.file)));
        }
        let img = image.data();
        let n_px = record.width * record.height;
        let px = (0..n_px)
            .flat_map(|i| (0..3).map(move |c| (img[c * n_px + i] * 255.0).round() as u8))
            .collect();
        let canvas = Canvas {
            w: record.width,
            h: record.height,
            px,
        };
        samples.push(sample_from(&canvas, record, schema)?);
    }
    Ok(samples)
}

/// Single-vehicle crops with their flat attribute labels, `side × side`.
/// Vehicles span 60-95% of a 64 px scene so body shapes survive resizing.
pub fn attribute_crops(seed: u64, count: usize, side: usize, schema: &AttributeSchema) -> Result<(Tensor, Vec<Vec<usize>>)> {
    let cfg = SynthConfig {
        num_images: count,
        image_side: 64,
        min_objects: 1,
        max_objects: 1,
        min_width: 38.0,
        max_width: 61.0,
    };
    cfg.validate()?;
    let mut crops = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let (canvas, objects) = render_scene(seed, i, &cfg, schema, Some(i % TEMPLATES.len()));
        let record = AnnotationRecord {
            image_id: i,
            file: String::new(),
            width: cfg.image_side,
            height: cfg.image_side,
            objects,
        };
        let s = sample_from(&canvas, record, schema)?;
        crops.push(crate::perceptron::crop_and_resize_proposals(&s.image, &s.gt_boxes[..1], side)?.crops);
        labels.push(s.gt_attributes[0].clone());
    }
    Ok((Tensor::concat(&crops, 0)?, labels))
}
