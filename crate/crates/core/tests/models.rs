use std::collections::BTreeMap;

use artifact_core::models::{
    build_classifier_with, load_checkpoint, multilabel_loss, read_checkpoint_meta, save_checkpoint, Architecture,
    BackboneSpec, Prediction, WeightRegistry, PROB_EPS,
};
use artifact_core::{Error, LabelVector};
use candle_core::{DType, Device, Tensor, Var};
use image::{Rgb, RgbImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn offline(spec: &BackboneSpec, seed: u64) -> artifact_core::models::ClassifierModel {
    build_classifier_with(spec, seed, &WeightRegistry::offline()).unwrap()
}

fn random_images(n: usize, size: u32, seed: u64) -> Vec<RgbImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| RgbImage::from_fn(size, size, |_, _| Rgb([rng.random(), rng.random(), rng.random()])))
        .collect()
}

fn input(batch: usize, res: usize) -> Tensor {
    Tensor::randn(0f32, 1.0, (batch, 3, res, res), &Device::Cpu).unwrap()
}

#[test]
fn tiny_cnn_emits_four_logits_per_image() {
    let m = offline(&BackboneSpec::tiny(64), 0);
    for b in [1, 3, 8] {
        assert_eq!(m.forward_t(&input(b, 64), false).unwrap().dims(), &[b, 4]);
    }
    assert_eq!(m.num_heads(), 4);
}

#[test]
fn resnet50_at_224_emits_four_logits() {
    let m = offline(&BackboneSpec::new(Architecture::Resnet50, false, 224), 0);
    assert_eq!(m.forward_t(&input(1, 224), false).unwrap().dims(), &[1, 4]);
    // torchvision's ResNet-50 has 23,508,032 backbone parameters; heads add 4 × 2049.
    assert_eq!(m.params().num_parameters(), 23_508_032 + 4 * 2049);
}

#[test]
fn other_registry_backbones_emit_four_logits() {
    // Reduced resolutions keep the shape check fast; layer geometry is the same.
    for (arch, res, backbone_params) in [
        (Architecture::EfficientnetB3, 64, 10_696_232),
        (Architecture::EfficientnetB4, 64, 17_548_616),
        (Architecture::VitBase, 64, 85_660_416),
    ] {
        let m = offline(&BackboneSpec::new(arch, false, res), 1);
        assert_eq!(m.forward_t(&input(2, res as usize), false).unwrap().dims(), &[2, 4], "{arch}");
        let f = m.backbone().feature_dim();
        assert_eq!(m.params().num_parameters(), backbone_params + 4 * (f + 1), "{arch}");
    }
}

#[test]
fn identical_spec_and_seed_give_identical_outputs() {
    let spec = BackboneSpec::tiny(64);
    let x = input(4, 64);
    let a = offline(&spec, 11).forward_t(&x, false).unwrap().to_vec2::<f32>().unwrap();
    let b = offline(&spec, 11).forward_t(&x, false).unwrap().to_vec2::<f32>().unwrap();
    let c = offline(&spec, 12).forward_t(&x, false).unwrap().to_vec2::<f32>().unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn unknown_architecture_is_a_configuration_error() {
    assert!(matches!("resnet18".parse::<Architecture>(), Err(Error::Config(_))));
    for a in Architecture::ALL {
        assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
    }
    let bad = BackboneSpec::new(Architecture::VitBase, false, 100);
    assert!(matches!(build_classifier_with(&bad, 0, &WeightRegistry::offline()), Err(Error::Config(_))));
}

#[test]
fn missing_pretrained_weights_are_a_fetch_error() {
    let spec = BackboneSpec::new(Architecture::TinyCnn, true, 64);
    assert!(matches!(build_classifier_with(&spec, 0, &WeightRegistry::offline()), Err(Error::Fetch(_))));
    let dir = tempfile::tempdir().unwrap();
    let err = build_classifier_with(&spec, 0, &WeightRegistry::with_dir(dir.path())).unwrap_err();
    assert!(matches!(err, Error::Fetch(_)), "{err:?}");
}

#[test]
fn pretrained_weights_load_into_the_backbone() {
    let dir = tempfile::tempdir().unwrap();
    let donor = offline(&BackboneSpec::tiny(64), 5);
    let mut tensors = Vec::new();
    for (name, var) in donor.params().named_vars() {
        if let Some(key) = name.strip_prefix("backbone.") {
            let v: Vec<f32> = var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
            let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
            tensors.push((key.to_string(), var.dims().to_vec(), bytes));
        }
    }
    let views: Vec<_> = tensors
        .iter()
        .map(|(k, s, b)| (k.clone(), safetensors::tensor::TensorView::new(safetensors::Dtype::F32, s.clone(), b).unwrap()))
        .collect();
    let blob = safetensors::serialize(views, None).unwrap();
    std::fs::write(dir.path().join("tiny_cnn.safetensors"), blob).unwrap();

    let spec = BackboneSpec::new(Architecture::TinyCnn, true, 64);
    let m = build_classifier_with(&spec, 99, &WeightRegistry::with_dir(dir.path())).unwrap();
    let x = input(2, 64);
    let fa = donor.backbone().forward_t(&x, false).unwrap().to_vec2::<f32>().unwrap();
    let fb = m.backbone().forward_t(&x, false).unwrap().to_vec2::<f32>().unwrap();
    assert_eq!(fa, fb);
}

#[test]
fn untrained_tiny_cnn_probabilities_stay_in_the_sanity_band() {
    let m = offline(&BackboneSpec::tiny(64), 0);
    let preds = m.predict_batch(&random_images(100, 64, 4), 0.5).unwrap();
    for head in 0..4 {
        let mean = preds.iter().map(|p| p.probabilities[head] as f64).sum::<f64>() / 100.0;
        assert!(mean > 0.2 && mean < 0.8, "head {head}: {mean}");
    }
}

#[test]
fn thresholding_follows_the_definition() {
    let p = Prediction::new([0.9, 0.2, 0.6, 0.4], 0.5).unwrap();
    assert_eq!(p.labels, LabelVector::from_bits([1, 0, 1, 0]).unwrap());
    let p = Prediction::new([0.5; 4], 0.5).unwrap();
    assert_eq!(p.labels, LabelVector::ALL);
    assert!(Prediction::new([0.5; 4], 1.0).is_err());
    assert!(Prediction::new([0.5; 4], 0.0).is_err());
}

#[test]
fn predict_rejects_non_square_images_and_clamps() {
    let m = offline(&BackboneSpec::tiny(64), 0);
    assert!(matches!(m.predict(&RgbImage::new(64, 48), 0.5), Err(Error::Preprocess(_))));
    for p in m.predict_batch(&random_images(8, 64, 2), 0.5).unwrap() {
        for v in p.probabilities {
            assert!(v as f64 >= PROB_EPS as f32 as f64 && v as f64 <= 1.0 - PROB_EPS);
        }
    }
}

#[test]
fn perturbing_one_head_changes_only_its_probability() {
    let m = offline(&BackboneSpec::tiny(64), 3);
    let images = random_images(4, 64, 8);
    let before = m.predict_batch(&images, 0.5).unwrap();
    for head in 0..4 {
        let w = m.params().get_var(&format!("heads.{head}.weight")).unwrap();
        let original = w.as_tensor().copy().unwrap();
        w.set(&(original.clone() + 0.5).unwrap()).unwrap();
        let after = m.predict_batch(&images, 0.5).unwrap();
        for (b, a) in before.iter().zip(&after) {
            for j in 0..4 {
                if j == head {
                    assert_ne!(a.probabilities[j], b.probabilities[j]);
                } else {
                    assert_eq!(a.probabilities[j], b.probabilities[j]);
                }
            }
        }
        w.set(&original).unwrap();
    }
}

fn mat(rows: &[[f64; 4]]) -> Tensor {
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Tensor::from_vec(flat, (rows.len(), 4), &Device::Cpu).unwrap()
}

fn bce_oracle(logits: &[[f64; 4]], targets: &[[f64; 4]]) -> f64 {
    let mut total = 0.0;
    let mut n = 0.0;
    for (zr, yr) in logits.iter().zip(targets) {
        for (z, y) in zr.iter().zip(yr) {
            let p = (1.0 / (1.0 + (-z).exp())).clamp(PROB_EPS, 1.0 - PROB_EPS);
            total += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            n += 1.0;
        }
    }
    total / n
}

#[test]
fn loss_matches_per_element_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let z: Vec<[f64; 4]> = (0..2).map(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0))).collect();
    let y: Vec<[f64; 4]> = (0..2).map(|_| std::array::from_fn(|_| rng.random_range(0..2) as f64)).collect();
    let loss = multilabel_loss(&mat(&z), &mat(&y), None)
        .unwrap()
        .to_scalar::<f64>()
        .unwrap();
    assert!((loss - bce_oracle(&z, &y)).abs() < 1e-12);
}

#[test]
fn loss_gradient_matches_central_differences_on_tiny_cnn_logits() {
    let m = offline(&BackboneSpec::tiny(64), 7);
    let logits = m.logits(&random_images(6, 64, 13)).unwrap().to_dtype(DType::F64).unwrap();
    let z: Vec<[f64; 4]> = logits.to_vec2::<f64>().unwrap().into_iter().map(|r| [r[0], r[1], r[2], r[3]]).collect();
    let y: Vec<[f64; 4]> = (0..6).map(|i| std::array::from_fn(|j| ((i + j) % 2) as f64)).collect();

    let var = Var::from_tensor(&logits).unwrap();
    let targets = mat(&y);
    let loss = multilabel_loss(var.as_tensor(), &targets, None).unwrap();
    let grad = loss.backward().unwrap().get(var.as_tensor()).unwrap().to_vec2::<f64>().unwrap();

    let h = 1e-6;
    for i in 0..6 {
        for j in 0..4 {
            let mut plus = z.clone();
            plus[i][j] += h;
            let mut minus = z.clone();
            minus[i][j] -= h;
            let fd = (bce_oracle(&plus, &y) - bce_oracle(&minus, &y)) / (2.0 * h);
            let rel = (grad[i][j] - fd).abs() / fd.abs().max(1e-12);
            assert!(rel < 1e-4, "({i},{j}): analytic {} vs fd {fd}", grad[i][j]);
        }
    }
}

#[test]
fn checkpoint_round_trip_restores_outputs_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    let m = offline(&BackboneSpec::tiny(32), 4);
    // Move the batch-norm statistics off their defaults.
    m.forward_t(&input(4, 32), true).unwrap();
    let mut extra = BTreeMap::new();
    extra.insert("epoch".to_string(), "3".to_string());
    save_checkpoint(&m, &path, &extra).unwrap();

    let (r, meta) = load_checkpoint(&path).unwrap();
    assert_eq!(meta.spec, *m.spec());
    assert_eq!(meta.extra, extra);
    assert_eq!(read_checkpoint_meta(&path).unwrap(), meta);
    let x = input(3, 32);
    assert_eq!(
        m.forward_t(&x, false).unwrap().to_vec2::<f32>().unwrap(),
        r.forward_t(&x, false).unwrap().to_vec2::<f32>().unwrap()
    );
}

#[test]
fn checkpoint_with_foreign_taxonomy_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    save_checkpoint(&offline(&BackboneSpec::tiny(16), 0), &path, &BTreeMap::new()).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let st = safetensors::SafeTensors::deserialize(&bytes).unwrap();
    let (_, header) = safetensors::SafeTensors::read_metadata(&bytes).unwrap();
    let mut meta = header.metadata().clone().unwrap();
    meta.insert("taxonomy_version".into(), "artifact-taxonomy/2".into());
    let blob = safetensors::serialize(st.tensors(), Some(meta)).unwrap();
    std::fs::write(&path, blob).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn raising_the_threshold_never_adds_a_label(
        probs in prop::array::uniform4(0.0f32..=1.0),
        t1 in 0.001f32..0.999,
        t2 in 0.001f32..0.999,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = Prediction::new(probs, lo).unwrap();
        let b = Prediction::new(probs, hi).unwrap();
        for i in 0..4 {
            prop_assert!(!b.labels.bits()[i] || a.labels.bits()[i]);
        }
    }

    #[test]
    fn loss_is_nonnegative_and_matches_oracle(
        z in prop::collection::vec(prop::array::uniform4(-30.0f64..30.0), 1..6),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<[f64; 4]> = z.iter().map(|_| std::array::from_fn(|_| rng.random_range(0..2) as f64)).collect();
        let loss = multilabel_loss(&mat(&z), &mat(&y), None)
            .unwrap().to_scalar::<f64>().unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert!((loss - bce_oracle(&z, &y)).abs() < 1e-9);
    }
}
