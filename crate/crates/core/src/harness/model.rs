//! The assembled detector: backbone, RPN, RoIAlign, proposal encoder with
//! learnable tokens, fusion, detection head and the attribute branch.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{AlignLoss, AttrUsage, Config};
use super::synth::{generate_samples, load_dataset, Sample, CLASSES};
use crate::det::{
    assign_anchors, assign_targets, generate_anchors, nms, roi_align, sample_targets, select_proposals, Assignment, BBox, Backbone, DeltaCoder,
    Detection, DetectionHead, RpnHead,
};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::nn::{GruCell, Init};
use crate::perceptron::{crop_and_resize_proposals, EncoderState, Fusion, PIXEL_MEAN, PIXEL_STD};
use crate::tensor::{ParamStore, Tensor};
use crate::vatt2vec::{
    contrastive_alignment_loss, cosine_alignment_loss, fuse_attributes, gather_attribute_embeddings, get_text_embeddings, select_group_argmax,
    AttributeHead, AttributeSchema, TextEmbeddingTable, VisualAligner,
};

pub const ATTR_HEAD_PREFIX: &str = "attr_head.";
pub const ATTR_HEAD_KIND: &str = "attr-head";
const RPN_BETA: f64 = 1.0 / 9.0;

/// Scalar loss components of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rpn_cls: f64,
    pub rpn_reg: f64,
    pub cls: f64,
    pub reg: f64,
    pub va: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn scaled(&self, k: f64) -> Self {
        LossBreakdown {
            rpn_cls: self.rpn_cls * k,
            rpn_reg: self.rpn_reg * k,
            cls: self.cls * k,
            reg: self.reg * k,
            va: self.va * k,
            total: self.total * k,
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        LossBreakdown {
            rpn_cls: self.rpn_cls + o.rpn_cls,
            rpn_reg: self.rpn_reg + o.rpn_reg,
            cls: self.cls + o.cls,
            reg: self.reg + o.reg,
            va: self.va + o.va,
            total: self.total + o.total,
        }
    }
}

/// Per-group tag choices for one RoI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeReadout {
    /// Flat schema indices.
    pub tag_ids: Vec<usize>,
    /// `(group, tag)` names.
    pub tags: Vec<(String, String)>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub detections: Vec<Detection>,
    /// Proposal index behind each detection.
    pub proposal_of: Vec<usize>,
    pub proposals: Vec<BBox>,
    pub attributes: Option<Vec<AttributeReadout>>,
    /// Last encoder block, `[proposals, heads, T, T]`.
    pub encoder_attention: Option<Tensor>,
    /// Attribute fusion block, `[proposals, heads, 47 + T, 47 + T]`.
    pub fusion_attention: Option<Tensor>,
}

struct RoiFeatures {
    fused: Tensor,
    tokens: Tensor,
    encoder_attention: Option<Tensor>,
}

pub struct VfmDet {
    pub config: Config,
    pub schema: AttributeSchema,
    pub embeddings: TextEmbeddingTable,
    text: Tensor,
    pub store: ParamStore,
    pub backbone: Backbone,
    pub rpn: RpnHead,
    pub anchors: Vec<BBox>,
    pub encoder: EncoderState,
    pub fusion: Fusion,
    pub head: DetectionHead,
    pub attr_head: AttributeHead,
    pub gru: Option<GruCell>,
    pub aligner: Option<VisualAligner>,
    rpn_coder: DeltaCoder,
    roi_coder: DeltaCoder,
}

/// Overwrites every parameter under `prefix` from a container of `kind`.
pub fn load_prefixed(store: &mut ParamStore, path: &std::path::Path, kind: &str, prefix: &str) -> Result<()> {
    let file = Container::read_kind(path, kind)?;
    let names: Vec<String> = store.iter().map(|p| p.name.clone()).filter(|n| n.starts_with(prefix)).collect();
    for name in names {
        let rec = file.get(&name).ok_or_else(|| Error::MissingParam(name.clone()))?;
        store.load(&name, &rec.shape, rec.data.clone())?;
    }
    Ok(())
}

fn loss_component(loss: &Option<Tensor>) -> f64 {
    loss.as_ref().map_or(0.0, Tensor::item)
}

impl VfmDet {
    /// Resolves the schema and embeddings from the config and builds the model.
    pub fn from_config(config: &Config) -> Result<Self> {
        let schema = match &config.schema {
            Some(p) => AttributeSchema::load(p)?,
            None => AttributeSchema::vehicle(),
        };
        let embeddings = get_text_embeddings(&schema, &config.embeddings)?;
        Self::new(config, schema, embeddings)
    }

    pub fn new(config: &Config, schema: AttributeSchema, embeddings: TextEmbeddingTable) -> Result<Self> {
        config.validate()?;
        schema.validate()?;
        if embeddings.rows() != schema.num_tags() {
            return Err(Error::Schema(format!("{} embedding rows for {} tags", embeddings.rows(), schema.num_tags())));
        }
        let enc_cfg = config.encoder();
        let m = &config.model;
        let side = config.data.image_side;
        let mut store = ParamStore::new();
        let encoder = match &m.encoder_weights {
            Some(p) => EncoderState::load_weights(&mut store, &enc_cfg, p, m.encoder_seed)?,
            None => EncoderState::init_random(&mut store, &enc_cfg, m.encoder_seed)?,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let chans: Vec<usize> = std::iter::once(3).chain(m.backbone_channels.iter().copied()).collect();
        let backbone = Backbone::new(&mut store, "backbone", &chans, true, &mut rng)?;
        let stride = backbone.stride();
        if !side.is_multiple_of(stride) {
            return Err(Error::Config(format!("image_side {side} is not divisible by backbone stride {stride}")));
        }
        let c = backbone.out_channels;
        let rpn = RpnHead::new(&mut store, "rpn", c, m.rpn_hidden, m.anchors.per_cell(), true, &mut rng)?;
        let anchors = generate_anchors(side / stride, side / stride, stride as f64, &m.anchors)?;
        let t = enc_cfg.num_tokens();
        let fusion = Fusion::new(&mut store, "fusion", m.fusion, c, t, &mut rng)?;
        let extra = if m.attr_usage == AttrUsage::Concat { m.attr_vector_dim } else { 0 };
        let head = DetectionHead::new(
            &mut store,
            "det_head",
            fusion.out_channels(),
            enc_cfg.roi_size,
            m.head_hidden,
            CLASSES.len(),
            extra,
            true,
            &mut rng,
        )?;
        let text_dim = embeddings.dim;
        let attr_head = AttributeHead::new(
            &mut store,
            ATTR_HEAD_PREFIX.trim_end_matches('.'),
            enc_cfg.dim,
            text_dim,
            m.attr_heads,
            m.attr_mlp_hidden,
            schema.num_tags(),
            m.attr_head_trainable,
            &mut rng,
        )?;
        if let Some(p) = &m.attr_head_weights {
            load_prefixed(&mut store, p, ATTR_HEAD_KIND, ATTR_HEAD_PREFIX)?;
        }
        let (gru, aligner) = match m.attr_usage {
            AttrUsage::None => (None, None),
            usage => {
                let gru = GruCell::new(&mut store, "attr_gru", text_dim, m.attr_vector_dim, Init::FanIn(1.0), true, &mut rng)?;
                let aligner = if usage == AttrUsage::GruContrastive {
                    Some(VisualAligner::new(&mut store, "aligner", fusion.out_channels(), m.attr_vector_dim, &mut rng)?)
                } else {
                    None
                };
                (Some(gru), aligner)
            }
        };
        Ok(VfmDet {
            config: config.clone(),
            text: embeddings.tensor(),
            schema,
            embeddings,
            store,
            backbone,
            rpn,
            anchors,
            encoder,
            fusion,
            head,
            attr_head,
            gru,
            aligner,
            rpn_coder: DeltaCoder::default(),
            roi_coder: DeltaCoder::roi_head(),
        })
    }

    pub fn image_side(&self) -> usize {
        self.config.data.image_side
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let side = self.image_side();
        if image.shape() != [3, side, side] {
            return Err(Error::ShapeMismatch {
                op: "detector input",
                lhs: image.shape().to_vec(),
                rhs: vec![3, side, side],
            });
        }
        Ok(())
    }

    fn backbone_features(&self, image: &Tensor) -> Result<Tensor> {
        self.backbone.forward(&self.store, &image.add_scalar(-PIXEL_MEAN).scale(1.0 / PIXEL_STD))
    }

    fn roi_features(&self, image: &Tensor, fmap: &Tensor, boxes: &[BBox], want_attention: bool) -> Result<RoiFeatures> {
        let enc = &self.encoder.config;
        let pooled = roi_align(fmap, boxes, enc.roi_size, 1.0 / self.backbone.stride() as f64, 2)?;
        let crops = crop_and_resize_proposals(image, boxes, enc.image_side)?;
        let out = self.encoder.encode(&self.store, &crops.crops, want_attention)?;
        let spatial = self.encoder.project_tokens_to_spatial(&self.store, &out.tokens)?;
        Ok(RoiFeatures {
            fused: self.fusion.forward(&self.store, &pooled.features, &spatial)?,
            tokens: out.tokens,
            encoder_attention: out.attention,
        })
    }

    /// Tag probabilities, per-group selections and fused attribute vectors
    /// for `tokens: [N, T, dim]`.
    fn attributes(&self, tokens: &Tensor) -> Result<(Tensor, Vec<Vec<usize>>, Option<Tensor>, Tensor)> {
        let tokens = if self.config.model.attr_head_trainable { tokens.clone() } else { tokens.detach() };
        let out = self.attr_head.forward(&self.store, &tokens, &self.text)?;
        let tags = self.schema.num_tags();
        let selected: Vec<Vec<usize>> = out.probs.data().chunks(tags).map(|row| select_group_argmax(row, &self.schema)).collect();
        let va = match &self.gru {
            Some(gru) => {
                let a = gather_attribute_embeddings(&self.text, &selected)?;
                Some(fuse_attributes(gru, &self.store, &a, self.schema.num_groups())?)
            }
            None => None,
        };
        Ok((out.probs, selected, va, out.attention))
    }

    /// RPN objectness and box losses for one image.
    fn rpn_losses<R: Rng + ?Sized>(&self, raw: &crate::det::RpnRaw, sample: &Sample, rng: &mut R) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let t = &self.config.train;
        let targets = assign_anchors(&self.anchors, &sample.gt_boxes, t.rpn_fg_iou, t.rpn_bg_iou, &self.rpn_coder);
        let picked = sample_targets(&targets, t.rpn_batch, 0.5, rng);
        if picked.is_empty() {
            return Ok((None, None));
        }
        let labels: Vec<f64> = picked
            .iter()
            .map(|&i| f64::from(u8::from(matches!(targets[i].assignment, Assignment::Foreground { .. }))))
            .collect();
        let cls = raw.objectness.index_select(&picked)?.bce_with_logits(&labels)?;
        let fg: Vec<usize> = picked.iter().copied().filter(|&i| matches!(targets[i].assignment, Assignment::Foreground { .. })).collect();
        let reg = if fg.is_empty() {
            None
        } else {
            let goal: Vec<f64> = fg.iter().flat_map(|&i| targets[i].deltas).collect();
            Some(raw.deltas.index_select(&fg)?.smooth_l1(&goal, RPN_BETA)?.scale(1.0 / picked.len() as f64))
        };
        Ok((Some(cls), reg))
    }

    /// Total loss of one image and its components.
    pub fn forward_train<R: Rng + ?Sized>(&self, sample: &Sample, rng: &mut R) -> Result<(Tensor, LossBreakdown)> {
        self.check_image(&sample.image)?;
        let t = &self.config.train;
        let side = self.image_side() as f64;
        let fmap = self.backbone_features(&sample.image)?;
        let raw = self.rpn.forward(&self.store, &fmap)?;
        let (rpn_cls, rpn_reg) = if t.rpn_loss { self.rpn_losses(&raw, sample, rng)? } else { (None, None) };

        let mut boxes: Vec<BBox> = select_proposals(&raw, &self.anchors, side, side, &t.rpn)?.into_iter().map(|p| p.bbox).collect();
        boxes.extend_from_slice(&sample.gt_boxes);
        let targets = assign_targets(&boxes, &sample.gt_boxes, &sample.gt_classes, t.roi_fg_iou, t.roi_bg_iou, &self.roi_coder);
        let picked = sample_targets(&targets, t.rois_per_image, t.fg_fraction, rng);
        let boxes: Vec<BBox> = picked.iter().map(|&i| boxes[i]).collect();
        let labels: Vec<usize> = picked.iter().map(|&i| targets[i].label().expect("sampled targets are labelled")).collect();
        let n_fg = labels.iter().take_while(|&&l| l > 0).count();

        let roi = self.roi_features(&sample.image, &fmap, &boxes, false)?;
        let usage = self.config.model.attr_usage;
        let attr_rows = match (usage, t.align_foreground_only) {
            (AttrUsage::None, _) => 0,
            (AttrUsage::Concat, _) | (AttrUsage::GruContrastive, false) => boxes.len(),
            (AttrUsage::GruContrastive, true) => n_fg,
        };
        let va = if attr_rows > 0 {
            self.attributes(&roi.tokens.slice(0, 0, attr_rows)?)?.2
        } else {
            None
        };
        let extra = if usage == AttrUsage::Concat { va.as_ref() } else { None };
        let out = self.head.forward(&self.store, &roi.fused, extra)?;
        let cls = out.class_logits.cross_entropy(&labels)?;
        let reg = if n_fg > 0 {
            let c = CLASSES.len();
            let rows: Vec<usize> = (0..n_fg).map(|i| i * c + labels[i] - 1).collect();
            let goal: Vec<f64> = picked[..n_fg].iter().flat_map(|&i| targets[i].deltas).collect();
            let d = out.deltas.reshape(&[boxes.len() * c, 4])?.index_select(&rows)?;
            Some(d.smooth_l1(&goal, 1.0)?.scale(1.0 / boxes.len() as f64))
        } else {
            None
        };
        let va_loss = match (usage, &self.aligner, &va, t.align_loss) {
            (AttrUsage::GruContrastive, Some(al), Some(va), loss) if loss != AlignLoss::None => {
                let vis = al.forward(&self.store, &roi.fused.slice(0, 0, attr_rows)?)?;
                let l = match loss {
                    AlignLoss::Cosine => cosine_alignment_loss(&vis, va)?,
                    _ => contrastive_alignment_loss(&vis, va, t.contrastive_temperature)?,
                };
                Some(l.scale(t.align_weight))
            }
            _ => None,
        };

        let mut total = cls.clone();
        for l in [&rpn_cls, &rpn_reg, &reg, &va_loss].into_iter().flatten() {
            total = total.add(l)?;
        }
        let breakdown = LossBreakdown {
            rpn_cls: loss_component(&rpn_cls),
            rpn_reg: loss_component(&rpn_reg),
            cls: cls.item(),
            reg: loss_component(&reg),
            va: loss_component(&va_loss),
            total: total.item(),
        };
        Ok((total, breakdown))
    }

    /// Detections for one image. Attribute readouts and attention maps are
    /// computed when requested.
    pub fn infer(&self, image: &Tensor, want_attributes: bool, want_attention: bool) -> Result<Inference> {
        self.check_image(image)?;
        let e = &self.config.eval;
        let side = self.image_side() as f64;
        let fmap = self.backbone_features(image)?.detach();
        let raw = self.rpn.forward(&self.store, &fmap)?;
        let proposals: Vec<BBox> = select_proposals(&raw, &self.anchors, side, side, &e.rpn)?.into_iter().map(|p| p.bbox).collect();
        if proposals.is_empty() {
            return Ok(Inference {
                detections: vec![],
                proposal_of: vec![],
                proposals,
                attributes: want_attributes.then(Vec::new),
                encoder_attention: None,
                fusion_attention: None,
            });
        }
        let roi = self.roi_features(image, &fmap, &proposals, want_attention)?;
        let usage = self.config.model.attr_usage;
        let need_attr = want_attributes || want_attention || usage == AttrUsage::Concat;
        let attr = if need_attr { Some(self.attributes(&roi.tokens)?) } else { None };
        let extra = match (&attr, usage) {
            (Some((_, _, Some(va), _)), AttrUsage::Concat) => Some(va),
            _ => None,
        };
        let out = self.head.forward(&self.store, &roi.fused, extra)?;
        let probs = out.class_logits.softmax();
        let (p, d) = (probs.data(), out.deltas.data());
        let c = CLASSES.len();
        let mut candidates = Vec::new();
        let mut source = Vec::new();
        for (i, prop) in proposals.iter().enumerate() {
            for k in 0..c {
                let score = p[i * (c + 1) + k + 1];
                if score < e.score_threshold {
                    continue;
                }
                let bbox = self.roi_coder.decode(&d[i * 4 * c + 4 * k..i * 4 * c + 4 * k + 4], prop).clamp(side, side);
                if bbox.is_valid() {
                    candidates.push(Detection { bbox, class_id: k, score });
                    source.push(i);
                }
            }
        }
        let mut kept = nms(&candidates, e.nms_iou);
        kept.truncate(e.max_detections);
        let proposal_of: Vec<usize> = kept
            .iter()
            .map(|k| {
                let j = candidates.iter().position(|c| c == k).expect("nms keeps a subset");
                source[j]
            })
            .collect();
        let attributes = match (&attr, want_attributes) {
            (Some((probs, selected, _, _)), true) => Some(
                proposal_of
                    .iter()
                    .map(|&i| self.readout(&probs.data()[i * self.schema.num_tags()..(i + 1) * self.schema.num_tags()], &selected[i]))
                    .collect(),
            ),
            _ => None,
        };
        Ok(Inference {
            detections: kept,
            proposal_of,
            proposals,
            attributes,
            encoder_attention: roi.encoder_attention,
            fusion_attention: if want_attention { attr.map(|a| a.3) } else { None },
        })
    }

    fn readout(&self, probs: &[f64], selected: &[usize]) -> AttributeReadout {
        AttributeReadout {
            tag_ids: selected.to_vec(),
            tags: selected
                .iter()
                .map(|&i| {
                    let (g, t) = self.schema.tag_name(i).expect("selection within schema");
                    (g.to_string(), t.to_string())
                })
                .collect(),
            probabilities: selected.iter().map(|&i| probs[i]).collect(),
        }
    }

    /// Schema-order tag probabilities and selections for given crops.
    pub fn attribute_probabilities(&self, crops: &Tensor) -> Result<(Vec<f64>, Vec<Vec<usize>>)> {
        let tokens = self.encoder.encode(&self.store, crops, false)?.tokens;
        let (probs, selected, _, _) = self.attributes(&tokens)?;
        Ok((probs.to_vec(), selected))
    }

    pub fn text_features(&self) -> &Tensor {
        &self.text
    }

    /// The configured dataset: `data_dir` when set, otherwise the synthetic
    /// set generated from the run seed.
    pub fn dataset(&self) -> Result<Vec<Sample>> {
        match &self.config.data_dir {
            Some(dir) => load_dataset(dir, &self.schema),
            None => generate_samples(self.config.seed, &self.config.data, &self.schema),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::generate_samples;

    fn tiny_config() -> Config {
        let mut c = Config::default();
        c.data.num_images = 2;
        c.model.head_hidden = 32;
        c.model.rpn_hidden = 16;
        c.model.backbone_channels = vec![8, 16, 32];
        c.train.rois_per_image = 8;
        c
    }

    #[test]
    fn train_forward_all_components() {
        let c = tiny_config();
        let model = VfmDet::from_config(&c).unwrap();
        let samples = generate_samples(0, &c.data, &model.schema).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (loss, parts) = model.forward_train(&samples[0], &mut rng).unwrap();
        assert!(parts.total.is_finite());
        assert!(parts.rpn_cls > 0.0 && parts.cls > 0.0 && parts.va > 0.0);
        assert!((parts.cls - (4f64).ln()).abs() < 0.1, "{}", parts.cls);
        loss.backward().unwrap();
        let filled = model.store.fill_missing_grads();
        assert!(filled.iter().all(|n| !n.starts_with("encoder.learnable") && !n.starts_with("backbone")), "{filled:?}");
    }

    #[test]
    fn va_toggle_and_usage_variants() {
        for (usage, loss) in [
            (AttrUsage::GruContrastive, AlignLoss::None),
            (AttrUsage::None, AlignLoss::Cosine),
            (AttrUsage::Concat, AlignLoss::Cosine),
            (AttrUsage::GruContrastive, AlignLoss::CrossEntropy),
        ] {
            let mut c = tiny_config();
            c.model.attr_usage = usage;
            c.train.align_loss = loss;
            let model = VfmDet::from_config(&c).unwrap();
            let samples = generate_samples(0, &c.data, &model.schema).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let (_, parts) = model.forward_train(&samples[1], &mut rng).unwrap();
            let expect_va = usage == AttrUsage::GruContrastive && loss != AlignLoss::None;
            assert_eq!(parts.va != 0.0, expect_va, "{usage:?} {loss:?}");
        }
    }

    #[test]
    fn inference_outputs() {
        let c = tiny_config();
        let model = VfmDet::from_config(&c).unwrap();
        let samples = generate_samples(0, &c.data, &model.schema).unwrap();
        let inf = model.infer(&samples[0].image, true, true).unwrap();
        let attrs = inf.attributes.unwrap();
        assert_eq!(attrs.len(), inf.detections.len());
        for a in &attrs {
            model.schema.validate_labels(&a.tag_ids).unwrap();
        }
        let t = model.encoder.config.num_tokens();
        assert_eq!(inf.encoder_attention.unwrap().shape()[2], t);
        assert_eq!(inf.fusion_attention.unwrap().shape()[2], 47 + t);
        assert!(model.infer(&Tensor::zeros(&[3, 32, 32]), false, false).is_err());
    }
}
