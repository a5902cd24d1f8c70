//! Acceptance criteria A1-A9. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits nonzero if any fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfmdet::det::{nms, nms_indices, roi_align, Backbone, BBox, Detection, DetectionHead, RpnHead};
use vfmdet::harness::{
    coco_thresholds, evaluate, evaluate_ap, pretrain_attributes, run_ablation, single_vehicle_scene, train, AblationAxis, Config,
    GroundTruth, Preset, TrainOptions, VfmDet,
};
use vfmdet::nn::{unfold_patches, GruCell, Init, LayerNorm, Linear, Mlp, Activation, PatchEmbed, TransformerBlock};
use vfmdet::perceptron::{crop_and_resize_proposals, fuse_with_roi, EncoderConfig, EncoderState, Fusion, FusionStrategy};
use vfmdet::tensor::finite_difference_check;
use vfmdet::vatt2vec::{
    contrastive_alignment_loss, cosine_alignment_loss, select_group_argmax, AttributeHead, AttributeSchema, VisualAligner,
};
use vfmdet::{ParamStore, Tensor};

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, u64, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn seeded(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.random_range(-scale..scale)).collect(), shape).unwrap()
}

/// Weighted sum with fixed pseudo-random weights, so gradients are not
/// trivially uniform (e.g. through a softmax row sum).
fn probe(y: &Tensor) -> vfmdet::Result<Tensor> {
    Ok(y.mul(&seeded(y.shape(), 991, 1.0))?.sum())
}

fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// A1

fn a1_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let mut worst: (f64, &str) = (0.0, "");
    let mut check = |name: &'static str, f: &dyn Fn(&Tensor) -> vfmdet::Result<Tensor>, x: &Tensor| -> Result<(), String> {
        let e = finite_difference_check(f, x, 1e-5).map_err(|e| format!("{name}: {e}"))?;
        if e > worst.0 {
            worst = (e, name);
        }
        ensure(e < 1e-4, format!("{name}: relative error {e:.2e}"))
    };

    let a = seeded(&[3, 4], 2, 1.0);
    let b = seeded(&[4, 5], 3, 1.0);
    let row = seeded(&[4], 4, 1.0);
    check("add (broadcast)", &|x| probe(&x.add(&row)?), &a)?;
    check("sub", &|x| probe(&x.sub(&a)?), &a.scale(0.5))?;
    check("mul", &|x| probe(&x.mul(&a)?), &seeded(&[3, 4], 5, 1.0))?;
    check("scale / add_scalar / neg", &|x| probe(&x.scale(1.7).add_scalar(0.3).neg()), &a)?;
    check("matmul lhs", &|x| probe(&x.matmul(&b)?), &a)?;
    check("matmul rhs", &|x| probe(&a.matmul(x)?), &b)?;
    check("batched matmul", &|x| probe(&x.matmul(&seeded(&[2, 4, 3], 6, 1.0))?), &seeded(&[2, 3, 4], 7, 1.0))?;
    check("relu", &|x| probe(&x.relu()), &a.add_scalar(0.05))?;
    check("gelu", &|x| probe(&x.gelu()), &a)?;
    check("sigmoid", &|x| probe(&x.sigmoid()), &a)?;
    check("tanh", &|x| probe(&x.tanh()), &a)?;
    check("softmax", &|x| probe(&x.softmax()), &a)?;
    let (g, be) = (seeded(&[4], 8, 1.0).add_scalar(1.5), seeded(&[4], 9, 1.0));
    check("layer_norm", &|x| probe(&x.layer_norm(&g, &be)?), &a)?;
    check("reshape / permute / transpose", &|x| probe(&x.reshape(&[2, 6])?.transpose(0, 1)?.reshape(&[3, 2, 2])?.permute(&[2, 0, 1])?), &a)?;
    check("concat / slice", &|x| probe(&Tensor::concat(&[x.slice(1, 1, 3)?, x.clone()], 1)?), &a)?;
    check("index_select", &|x| probe(&x.index_select(&[2, 0, 2, 1])?), &a)?;
    check("sum_axes / mean_axes", &|x| probe(&x.sum_axes(&[0])?.add(&x.mean_axes(&[0])?)?), &seeded(&[3, 2, 2], 10, 1.0))?;
    check("l2_normalize", &|x| probe(&x.l2_normalize()), &a)?;
    check("cross_entropy", &|x| x.cross_entropy(&[0, 3, 1]), &a)?;
    let targets = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    check("bce_with_logits", &|x| x.bce_with_logits(&targets), &a)?;
    let reg: Vec<f64> = seeded(&[3, 4], 11, 1.0).to_vec();
    check("smooth_l1", &|x| x.smooth_l1(&reg, 1.0 / 9.0), &a.scale(0.3))?;
    check("cosine_alignment_loss", &|x| cosine_alignment_loss(x, &b.slice(0, 0, 3)?.slice(1, 0, 4)?), &a)?;
    check("contrastive_alignment_loss", &|x| contrastive_alignment_loss(x, &seeded(&[3, 4], 12, 1.0), 0.5), &a)?;

    let fmap = seeded(&[2, 4, 4], 13, 1.0);
    let boxes = [BBox::new(0.3, 0.2, 5.1, 6.3), BBox::new(2.0, 1.5, 7.0, 4.0)];
    check("roi_align", &|x| probe(&roi_align(x, &boxes, 2, 0.5, 2)?.features), &fmap)?;
    check("unfold_patches", &|x| probe(&unfold_patches(x, 2)?), &seeded(&[1, 3, 4, 4], 14, 1.0))?;
    check("fuse_with_roi", &|x| probe(&fuse_with_roi(x, &seeded(&[3, 2, 2], 15, 1.0))?), &seeded(&[2, 2, 2], 16, 1.0))?;

    let lin = Linear::new(&mut store, "lin", 4, 3, Init::FanIn(1.0), true, &mut rng).map_err(err)?;
    check("linear", &|x| probe(&lin.forward(&store, x)?), &a)?;
    let ln = LayerNorm::new(&mut store, "ln", 4, true).map_err(err)?;
    check("layer norm module", &|x| probe(&ln.forward(&store, x)?), &a)?;
    let mlp = Mlp::new(&mut store, "mlp", &[4, 6, 2], Activation::Gelu, Init::FanIn(1.0), true, &mut rng).map_err(err)?;
    check("mlp", &|x| probe(&mlp.forward(&store, x)?), &a)?;
    let pe = PatchEmbed::new(&mut store, "pe", 2, 3, 4, Init::Xavier, true, &mut rng).map_err(err)?;
    check("patch embed", &|x| probe(&pe.forward(&store, x)?), &seeded(&[1, 3, 4, 4], 17, 1.0))?;
    let block = TransformerBlock::new(&mut store, "blk", 8, 2, 2.0, true, &mut rng).map_err(err)?;
    check("transformer block", &|x| probe(&block.forward(&store, x)?.tokens), &seeded(&[2, 3, 8], 18, 1.0))?;
    let gru = GruCell::new(&mut store, "gru", 4, 5, Init::FanIn(1.0), true, &mut rng).map_err(err)?;
    let h0 = seeded(&[1, 5], 19, 0.5);
    check("gru step", &|x| probe(&gru.step(&store, x, &h0)?), &seeded(&[1, 4], 20, 1.0))?;
    check(
        "gru sequence",
        &|x| {
            let steps: Vec<Tensor> = (0..3).map(|i| x.slice(0, i, i + 1)).collect::<vfmdet::Result<_>>()?;
            probe(gru.fuse_sequence(&store, &steps, None)?.last())
        },
        &a,
    )?;
    let head = AttributeHead::new(&mut store, "attr", 8, 6, 2, 5, 4, true, &mut rng).map_err(err)?;
    let text = seeded(&[4, 6], 21, 1.0);
    check("attribute head", &|x| head.forward(&store, x, &text).map(|o| o.probs.sum()), &seeded(&[2, 3, 8], 22, 1.0))?;
    let det = DetectionHead::new(&mut store, "det", 3, 2, 6, 3, 2, true, &mut rng).map_err(err)?;
    let extra = seeded(&[2, 2], 23, 1.0);
    check(
        "detection head",
        &|x| {
            let o = det.forward(&store, x, Some(&extra))?;
            probe(&o.class_logits)?.add(&probe(&o.deltas)?)
        },
        &seeded(&[2, 3, 2, 2], 24, 1.0),
    )?;
    let aligner = VisualAligner::new(&mut store, "align", 3, 4, &mut rng).map_err(err)?;
    check("pooled projection", &|x| probe(&aligner.forward(&store, x)?), &seeded(&[2, 3, 2, 2], 25, 1.0))?;
    for strategy in [FusionStrategy::Concat, FusionStrategy::Weighted, FusionStrategy::Linear] {
        let f = Fusion::new(&mut store, &format!("fusion_{}", strategy.name()), strategy, 3, 2, &mut rng).map_err(err)?;
        let bar = seeded(&[2, 2, 2, 2], 26, 1.0);
        check("fusion", &|x| probe(&f.forward(&store, x, &bar)?), &seeded(&[2, 3, 2, 2], 27, 1.0))?;
    }
    let backbone = Backbone::new(&mut store, "bb", &[3, 4, 6], true, &mut rng).map_err(err)?;
    check("backbone", &|x| probe(&backbone.forward(&store, x)?), &seeded(&[3, 8, 8], 28, 1.0))?;
    let rpn = RpnHead::new(&mut store, "rpn", 4, 6, 2, true, &mut rng).map_err(err)?;
    check(
        "rpn head",
        &|x| {
            let o = rpn.forward(&store, x)?;
            probe(&o.objectness)?.add(&probe(&o.deltas)?)
        },
        &seeded(&[4, 3, 3], 29, 1.0),
    )?;
    let enc_cfg = EncoderConfig {
        image_side: 16,
        patch_size: 8,
        dim: 8,
        depth: 1,
        heads: 2,
        mlp_ratio: 2.0,
        num_learnable_tokens: 2,
        proj_dim: 4,
        roi_size: 2,
        micro_batch: 32,
    };
    let enc = EncoderState::init_random(&mut store, &enc_cfg, 30).map_err(err)?;
    check(
        "encoder + token projection",
        &|x| {
            let t = enc.encode(&store, x, false)?.tokens;
            probe(&enc.project_tokens_to_spatial(&store, &t)?)
        },
        &seeded(&[1, 3, 16, 16], 31, 1.0).scale(0.5).add_scalar(0.5),
    )?;
    Ok(format!("max relative error {:.2e} ({})", worst.0, worst.1))
}

// A2

fn a2_paper_shapes() -> Outcome {
    let image = seeded(&[3, 96, 128], 40, 0.5).add_scalar(0.5);
    let crops = crop_and_resize_proposals(&image, &[BBox::new(10.0, 12.0, 90.0, 70.0)], 224).map_err(err)?.crops;
    ensure(crops.shape() == [1, 3, 224, 224], format!("crop {:?}", crops.shape()))?;
    let patches = unfold_patches(&crops, 16).map_err(err)?;
    ensure(patches.shape()[1] == 196, format!("patches {:?}", patches.shape()))?;

    let mut no_tokens = EncoderConfig::paper();
    no_tokens.num_learnable_tokens = 0;
    let mut store = ParamStore::new();
    let plain = EncoderState::init_random(&mut store, &no_tokens, 0).map_err(err)?;
    let t0 = plain.encode(&store, &crops, false).map_err(err)?.tokens;
    ensure(t0.shape() == [1, 197, 768], format!("tokens {:?}", t0.shape()))?;

    let cfg = EncoderConfig::paper();
    ensure(cfg.num_learnable_tokens == 8, "paper preset K != 8")?;
    let mut store = ParamStore::new();
    let enc = EncoderState::init_random(&mut store, &cfg, 0).map_err(err)?;
    let tokens = enc.encode(&store, &crops, false).map_err(err)?.tokens;
    ensure(tokens.shape() == [1, 205, 768], format!("tokens with K=8 {:?}", tokens.shape()))?;
    let spatial = enc.project_tokens_to_spatial(&store, &tokens).map_err(err)?;
    ensure(spatial.shape() == [1, 205, 16, 16], format!("projection {:?}", spatial.shape()))?;
    let roi = Tensor::zeros(&[256, 16, 16]);
    let fused = fuse_with_roi(&roi, &spatial.reshape(&[205, 16, 16]).map_err(err)?).map_err(err)?;
    ensure(fused.shape() == [461, 16, 16], format!("fusion {:?}", fused.shape()))?;

    let c = Config {
        preset: Preset::Paper,
        ..Default::default()
    };
    ensure(c.encoder() == cfg, "paper preset config differs from the paper encoder")?;
    Ok("224 -> 196 -> 197 -> 205 -> 205x16x16 -> 461x16x16".into())
}

// A3

fn a3_frozen_audit() -> Outcome {
    let mut c = Config::default();
    c.train.max_steps = 50;
    let mut model = VfmDet::from_config(&c).map_err(err)?;
    let samples = model.dataset().map_err(err)?;
    let tokens = |m: &VfmDet| m.store.hash_where(|p| p.name.starts_with("encoder.learnable"));
    let heads = |m: &VfmDet| m.store.hash_where(|p| p.name.starts_with("det_head.") || p.name.starts_with("rpn."));
    let (frozen0, tokens0, heads0) = (model.store.frozen_hash(), tokens(&model), heads(&model));
    let report = train(&mut model, &samples, &TrainOptions::default()).map_err(err)?;
    ensure(report.logs.len() == 50, format!("{} steps logged", report.logs.len()))?;
    ensure(model.store.frozen_hash() == frozen0, "frozen parameters changed")?;
    ensure(report.frozen_hash == frozen0, "reported frozen hash differs")?;
    ensure(tokens(&model) != tokens0, "learnable tokens unchanged")?;
    ensure(heads(&model) != heads0, "heads unchanged")?;
    Ok(format!("frozen hash {}… unchanged over 50 steps", &frozen0[..12]))
}

// A4

fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    let union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn random_box(rng: &mut ChaCha8Rng, extent: f64) -> BBox {
    let x = rng.random_range(0.0..extent);
    let y = rng.random_range(0.0..extent);
    BBox::new(x, y, x + rng.random_range(1.0..extent * 0.6), y + rng.random_range(1.0..extent * 0.6))
}

/// The unique subset S with: i ∈ S iff no higher-scored member of S overlaps
/// i at or above the threshold. Found by trying every subset.
fn nms_oracle(boxes: &[BBox], scores: &[f64], thr: f64) -> Vec<usize> {
    let n = boxes.len();
    let mut found = Vec::new();
    for mask in 0u32..(1 << n) {
        let inside = |i: usize| mask & (1 << i) != 0;
        let consistent = (0..n).all(|i| {
            let survives = (0..n).filter(|&j| inside(j) && scores[j] > scores[i]).all(|j| iou(&boxes[i], &boxes[j]) < thr);
            survives == inside(i)
        });
        if consistent {
            found.push(mask);
        }
    }
    assert_eq!(found.len(), 1, "greedy fixed point must be unique");
    let mut keep: Vec<usize> = (0..n).filter(|&i| found[0] & (1 << i) != 0).collect();
    keep.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    keep
}

fn nms_cases() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut cases = 0;
    for n in 0..=6 {
        for _ in 0..400 {
            let boxes: Vec<BBox> = (0..n).map(|_| random_box(&mut rng, 10.0)).collect();
            let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let thr = [0.3, 0.5, 0.7][rng.random_range(0..3)];
            let got = nms_indices(&boxes, &scores, thr);
            let want = nms_oracle(&boxes, &scores, thr);
            ensure(got == want, format!("nms_indices {got:?} vs oracle {want:?} for {boxes:?} {scores:?} at {thr}"))?;

            let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let dets: Vec<Detection> = (0..n)
                .map(|i| Detection {
                    bbox: boxes[i],
                    class_id: classes[i],
                    score: scores[i],
                })
                .collect();
            let mut want: Vec<usize> = Vec::new();
            for c in 0..2 {
                let members: Vec<usize> = (0..n).filter(|&i| classes[i] == c).collect();
                let b: Vec<BBox> = members.iter().map(|&i| boxes[i]).collect();
                let s: Vec<f64> = members.iter().map(|&i| scores[i]).collect();
                want.extend(nms_oracle(&b, &s, thr).into_iter().map(|j| members[j]));
            }
            want.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
            let got: Vec<(usize, f64)> = nms(&dets, thr).iter().map(|d| (d.class_id, d.score)).collect();
            let want: Vec<(usize, f64)> = want.iter().map(|&i| (classes[i], scores[i])).collect();
            ensure(got == want, format!("class-wise nms {got:?} vs oracle {want:?}"))?;
            cases += 2;
        }
    }
    Ok(cases)
}

/// Per-class AP at one threshold: every score-ordered prefix is matched from
/// scratch, and precision at each of the 101 recall levels is the best
/// precision of any prefix reaching it.
fn ap_oracle(dets: &[(usize, BBox, f64)], gts: &[Vec<BBox>], thr: f64) -> f64 {
    let num_gt: usize = gts.iter().map(Vec::len).sum();
    if num_gt == 0 {
        return if dets.is_empty() { 1.0 } else { 0.0 };
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].2.total_cmp(&dets[a].2));
    let mut points = Vec::new();
    for k in 1..=order.len() {
        let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let mut tp = 0;
        for &d in &order[..k] {
            let (img, b, _) = &dets[d];
            let mut best: Option<usize> = None;
            for (j, g) in gts[*img].iter().enumerate() {
                let v = iou(b, g);
                if !used[*img][j] && v >= thr && best.is_none_or(|bj| v > iou(b, &gts[*img][bj])) {
                    best = Some(j);
                }
            }
            if let Some(j) = best {
                used[*img][j] = true;
                tp += 1;
            }
        }
        points.push((tp as f64 / num_gt as f64, tp as f64 / k as f64));
    }
    (0..=100)
        .map(|r| {
            let r = r as f64 / 100.0;
            points.iter().filter(|(rec, _)| *rec >= r - 1e-12).map(|(_, p)| *p).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 101.0
}

fn ap_cases() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let thresholds = coco_thresholds();
    let cases = 2000;
    for _ in 0..cases {
        let images = rng.random_range(1..=2);
        let num_gt = rng.random_range(0..=3);
        let num_det = rng.random_range(0..=5);
        let mut gt = vec![GroundTruth::default(); images];
        let mut gt_list = Vec::new();
        for _ in 0..num_gt {
            let img = rng.random_range(0..images);
            let b = random_box(&mut rng, 20.0);
            let c = rng.random_range(0..2);
            gt[img].boxes.push(b);
            gt[img].class_ids.push(c);
            gt_list.push((img, b, c));
        }
        let mut preds = vec![Vec::new(); images];
        for _ in 0..num_det {
            let (img, bbox, class_id) = if !gt_list.is_empty() && rng.random_bool(0.7) {
                let (img, g, c) = gt_list[rng.random_range(0..gt_list.len())];
                let j = g.width() * 0.3;
                let jitter = BBox::new(
                    g.x1 + rng.random_range(-j..j),
                    g.y1 + rng.random_range(-j..j),
                    g.x2 + rng.random_range(-j..j),
                    g.y2 + rng.random_range(-j..j),
                );
                let c = if rng.random_bool(0.85) { c } else { 1 - c };
                (img, if jitter.is_valid() { jitter } else { g }, c)
            } else {
                (rng.random_range(0..images), random_box(&mut rng, 20.0), rng.random_range(0..2))
            };
            preds[img].push(Detection {
                bbox,
                class_id,
                score: rng.random::<f64>(),
            });
        }
        let report = evaluate_ap(&preds, &gt, 2, &thresholds);
        let mut per_class: Vec<Vec<f64>> = Vec::new();
        for c in 0..2 {
            let dets: Vec<(usize, BBox, f64)> = preds
                .iter()
                .enumerate()
                .flat_map(|(i, p)| p.iter().filter(|d| d.class_id == c).map(move |d| (i, d.bbox, d.score)))
                .collect();
            let gts: Vec<Vec<BBox>> = gt
                .iter()
                .map(|g| g.boxes.iter().zip(&g.class_ids).filter(|(_, &k)| k == c).map(|(b, _)| *b).collect())
                .collect();
            if dets.is_empty() && gts.iter().all(Vec::is_empty) {
                continue;
            }
            per_class.push(thresholds.iter().map(|&t| ap_oracle(&dets, &gts, t)).collect());
        }
        let summary = |f: &dyn Fn(&Vec<f64>) -> f64| {
            if per_class.is_empty() {
                1.0
            } else {
                per_class.iter().map(f).sum::<f64>() / per_class.len() as f64
            }
        };
        let want = [
            summary(&|v| v.iter().sum::<f64>() / v.len() as f64),
            summary(&|v| v[0]),
            summary(&|v| v[5]),
        ];
        let got = [report.ap, report.ap50, report.ap75];
        for (g, w) in got.iter().zip(&want) {
            ensure((g - w).abs() < 1e-12, format!("AP {got:?} vs oracle {want:?} for {preds:?} / {gt:?}"))?;
        }
    }
    Ok(cases)
}

/// Bilinear value at `(y, x)` written as a tent-weighted sum over all cells,
/// with the border clamp and the one-cell outside cutoff.
fn bilinear_oracle(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    if y < -1.0 || y > h as f64 || x < -1.0 || x > w as f64 {
        return 0.0;
    }
    let (yc, xc) = (y.clamp(0.0, (h - 1) as f64), x.clamp(0.0, (w - 1) as f64));
    let mut v = 0.0;
    for i in 0..h {
        for j in 0..w {
            let wy = (1.0 - (yc - i as f64).abs()).max(0.0);
            let wx = (1.0 - (xc - j as f64).abs()).max(0.0);
            v += wy * wx * plane[i * w + j];
        }
    }
    v
}

fn roi_cases() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut cases = 0;
    for _ in 0..500 {
        let c = rng.random_range(1..=3);
        let fmap = seeded(&[c, 4, 4], rng.random(), 1.0);
        let scale = [1.0, 0.5, 0.25][rng.random_range(0..3)];
        let extent = 4.0 / scale;
        let boxes: Vec<BBox> = (0..rng.random_range(1..=3))
            .map(|_| {
                let x = rng.random_range(-0.3 * extent..extent);
                let y = rng.random_range(-0.3 * extent..extent);
                BBox::new(x, y, x + rng.random_range(0.1..extent), y + rng.random_range(0.1..extent))
            })
            .collect();
        let size = rng.random_range(1..=3);
        let sampling = rng.random_range(1..=3);
        let got = roi_align(&fmap, &boxes, size, scale, sampling).map_err(err)?.features.to_vec();
        let data = fmap.to_vec();
        let mut want = Vec::new();
        for b in &boxes {
            let (bw, bh) = ((b.x2 - b.x1) * scale / size as f64, (b.y2 - b.y1) * scale / size as f64);
            for ch in 0..c {
                let plane = &data[ch * 16..(ch + 1) * 16];
                for py in 0..size {
                    for px in 0..size {
                        let mut acc = 0.0;
                        for iy in 0..sampling {
                            for ix in 0..sampling {
                                let y = b.y1 * scale - 0.5 + bh * (py as f64 + (iy as f64 + 0.5) / sampling as f64);
                                let x = b.x1 * scale - 0.5 + bw * (px as f64 + (ix as f64 + 0.5) / sampling as f64);
                                acc += bilinear_oracle(plane, 4, 4, y, x);
                            }
                        }
                        want.push(acc / (sampling * sampling) as f64);
                    }
                }
            }
        }
        ensure(got.len() == want.len(), "roi_align output length")?;
        for (g, w) in got.iter().zip(&want) {
            ensure((g - w).abs() < 1e-12, format!("roi_align {g} vs oracle {w} for {boxes:?}"))?;
        }
        cases += 1;
    }
    Ok(cases)
}

fn argmax_cases() -> Result<usize, String> {
    let schema = AttributeSchema::vehicle();
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let cases = 2000;
    for _ in 0..cases {
        let levels = rng.random_range(2..=6);
        let m: Vec<f64> = (0..schema.num_tags()).map(|_| rng.random_range(0..levels) as f64 / (levels - 1) as f64).collect();
        let mut want = Vec::new();
        let mut offset = 0;
        for g in &schema.groups {
            let n = g.tags.len();
            let top = m[offset..offset + n].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            want.push(offset + (0..n).find(|&i| m[offset + i] == top).unwrap());
            offset += n;
        }
        let got = select_group_argmax(&m, &schema);
        ensure(got == want, format!("argmax {got:?} vs brute force {want:?}"))?;
    }
    Ok(cases)
}

fn a4_oracles() -> Outcome {
    let n = nms_cases()?;
    let a = ap_cases()?;
    let r = roi_cases()?;
    let s = argmax_cases()?;
    Ok(format!("0 mismatches: nms {n}, ap {a}, roi_align {r}, group argmax {s} cases"))
}

// A5

fn a5_overfit() -> Outcome {
    let config = Config::load(&repo_root().join("configs/overfit.toml")).map_err(err)?;
    ensure(config.preset == Preset::Desk && config.data.num_images == 20, "overfit config is not the desk 20-image set")?;
    let mut model = VfmDet::from_config(&config).map_err(err)?;
    let samples = model.dataset().map_err(err)?;
    let report = train(&mut model, &samples, &TrainOptions::default()).map_err(err)?;
    let per_epoch = samples.len().div_ceil(config.train.batch_size);
    let (first, last) = (report.first_loss(), report.tail_loss(per_epoch));
    let l = &report.logs[0].losses;
    ensure(l.cls > 0.0 && l.reg > 0.0 && l.va > 0.0, format!("first step is missing a loss term: {l:?}"))?;
    let drop = 1.0 - last / first;
    let eval = evaluate(&model, &samples).map_err(err)?;
    let summary = format!("loss {first:.3} -> {last:.3} ({:.1}% drop), training AP50 {:.3}", 100.0 * drop, eval.ap50);
    ensure(drop >= 0.90 && eval.ap50 >= 0.90, summary.clone())?;

    // A fresh scene holding one bright vehicle.
    let gt = BBox::new(14.0, 24.0, 50.0, 39.0);
    let scene = single_vehicle_scene(4242, 64, gt, 7, 2, &model.schema).map_err(err)?;
    let inference = model.infer(&scene.image, false, false).map_err(err)?;
    let hit = inference.detections.iter().any(|d| d.score > 0.5 && iou(&d.bbox, &gt) >= 0.5);
    ensure(hit, format!("{summary}; no detection with score > 0.5 over a single high-contrast vehicle"))?;
    Ok(format!("{summary}; single-vehicle scene detected"))
}

// A6

fn a6_cosine_loss() -> Outcome {
    let row = |v: &[f64]| Tensor::from_vec(v.to_vec(), &[1, v.len()]).unwrap();
    let e1 = row(&[1.0, 0.0, 0.0]);
    let cases = [(row(&[1.0, 0.0, 0.0]), 0.0), (row(&[0.0, 1.0, 0.0]), 1.0), (row(&[-1.0, 0.0, 0.0]), 2.0)];
    for (v, want) in &cases {
        let got = cosine_alignment_loss(&e1, v).map_err(err)?.item();
        ensure((got - want).abs() < 1e-9, format!("loss {got} != {want}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut worst_scale: f64 = 0.0;
    for _ in 0..2000 {
        let n = rng.random_range(1..=4);
        let d = rng.random_range(1..=16);
        let u = seeded(&[n, d], rng.random(), 3.0);
        let v = seeded(&[n, d], rng.random(), 3.0);
        let base = cosine_alignment_loss(&u, &v).map_err(err)?.item();
        ensure((0.0..=2.0).contains(&base), format!("loss {base} outside [0, 2]"))?;
        let (a, b) = (rng.random_range(1e-3..1e3), rng.random_range(1e-3..1e3));
        for scaled in [cosine_alignment_loss(&u.scale(a), &v).map_err(err)?, cosine_alignment_loss(&u, &v.scale(b)).map_err(err)?] {
            worst_scale = worst_scale.max((scaled.item() - base).abs());
        }
    }
    ensure(worst_scale < 1e-9, format!("rescaling moved the loss by {worst_scale:.2e}"))?;
    Ok(format!("0/1/2 exact, range held, max rescaling drift {worst_scale:.1e}"))
}

// A7

fn a7_ablation() -> Outcome {
    let mut base = Config::default();
    base.train.max_steps = 2;
    base.data.num_images = 2;
    let samples = VfmDet::from_config(&base).map_err(err)?.dataset().map_err(err)?;
    let expected: [(AblationAxis, [&str; 3]); 4] = [
        (AblationAxis::LearnableTokens, ["4", "8", "12"]),
        (AblationAxis::Fusion, ["concat", "weighted", "linear"]),
        (AblationAxis::AttrUsage, ["none", "concat", "gru-contrastive"]),
        (AblationAxis::Loss, ["none", "cross-entropy", "cosine"]),
    ];
    for (axis, levels) in expected {
        let table = run_ablation(&base, axis, &samples, &samples, false).map_err(err)?;
        let got: Vec<&str> = table.rows.iter().map(|r| r.level.as_str()).collect();
        ensure(got == levels, format!("{} levels {got:?}", axis.name()))?;
        for r in &table.rows {
            ensure(
                [r.ap, r.ap50, r.ap75].iter().all(|v| (0.0..=1.0).contains(v)) && r.final_loss.is_finite(),
                format!("{} row {r:?}", axis.name()),
            )?;
        }
        let md = table.to_markdown();
        let lines: Vec<&str> = md.lines().collect();
        ensure(lines.len() == 5 && lines[0] == format!("| {} | AP | AP50 | AP75 |", axis.name()), format!("table\n{md}"))?;
        ensure(lines.iter().all(|l| l.matches('|').count() == 5), format!("ragged table\n{md}"))?;
    }
    Ok("4 axes x 3 levels, 5-line tables".into())
}

// A8

fn a8_attribute_pretraining() -> Outcome {
    let config = Config::default();
    ensure(config.pretrain.num_crops == 50 && config.pretrain.optim.epochs == 20, "default pretraining is not 50 crops x 20 epochs")?;
    let mut model = VfmDet::from_config(&config).map_err(err)?;
    let report = pretrain_attributes(&mut model).map_err(err)?;
    ensure(report.frozen_hash_before == report.frozen_hash_after, "encoder changed during pretraining")?;
    let acc: Vec<String> = report.group_accuracy.iter().map(|a| format!("{a:.2}")).collect();
    let summary = format!("per-group top-1 [{}]", acc.join(", "));
    ensure(report.min_group_accuracy() >= 0.95, summary.clone())?;
    Ok(summary)
}

// A9

fn a9_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut c = Config::default();
    c.train.max_steps = 12;
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let mut model = VfmDet::from_config(&c).map_err(err)?;
        let samples = model.dataset().map_err(err)?;
        let opts = TrainOptions {
            out_dir: Some(dir.path().join(run)),
            ..Default::default()
        };
        let report = train(&mut model, &samples, &opts).map_err(err)?;
        let path = report.checkpoint.ok_or("no final checkpoint written")?;
        files.push(std::fs::read(path).map_err(err)?);
    }
    ensure(files[0] == files[1], "final checkpoints differ")?;
    Ok(format!("two 12-step runs, {} identical checkpoint bytes", files[0].len()))
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 9] = [
        ("A1", "gradient suite", 120, a1_gradients),
        ("A2", "paper-preset shapes", 60, a2_paper_shapes),
        ("A3", "frozen-parameter audit", 120, a3_frozen_audit),
        ("A4", "oracle equivalence", 180, a4_oracles),
        ("A5", "end-to-end overfit", 600, a5_overfit),
        ("A6", "cosine loss properties", 60, a6_cosine_loss),
        ("A7", "ablation harness", 600, a7_ablation),
        ("A8", "attribute-head pretraining", 180, a8_attribute_pretraining),
        ("A9", "reproducibility", 300, a9_reproducibility),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(s) if took > Duration::from_secs(budget) => Err(format!("{s}; over the {budget} s budget")),
            o => o,
        };
        let (tag, detail) = match &outcome {
            Ok(s) => ("PASS", s),
            Err(s) => {
                failed += 1;
                ("FAIL", s)
            }
        };
        println!("{id} {tag} {name}: {detail} [{:.1} s]", took.as_secs_f64());
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
