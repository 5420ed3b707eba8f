//! Hand-built weight bundles with forward passes worked out by hand, and the
//! `.rwgt` file interface.

use std::fs;
use std::sync::Arc;

use rangepack::codec::{analyze_frame, decode_frame, encode_frame, BlockLayout, WeightRegistry};
use rangepack::geometry::{quantize_code, Pose, PoseTrack, QuantizationSpec, RangeImage};
use rangepack::predictor::{
    anchor_net_infer, ContextPointSet, Layer, PredictorKind, RawContextPoint, WeightBundle,
};
use rangepack::scene::small_calibration;
use rangepack::Error;
use sha2::{Digest, Sha256};

fn raw(d_azimuth: f64, d_elevation: f64, range: f64, time: u8) -> RawContextPoint {
    RawContextPoint {
        d_azimuth,
        d_elevation,
        range,
        time,
    }
}

/// Scores each point by `relu(rel_range / norm + time)`; the residual head is
/// the constant 0.5 in normalized units.
fn temporal_golden() -> WeightBundle {
    let layers = vec![
        Layer::pointwise(1, 4, vec![0.0, 0.0, 1.0, 1.0], vec![0.0]),
        Layer::max_pool(1),
        Layer::concat(2, 0),
        Layer::pointwise(1, 2, vec![0.0, 1.0], vec![0.0]),
        Layer::pointwise(1, 2, vec![0.0, 0.0], vec![0.5]),
    ];
    WeightBundle::new(4, 199, 2.0, layers).unwrap()
}

/// Scores by `relu(rel_range / norm)` with a zero residual: on flat context
/// every score ties at 0 and the first anchor wins.
fn intra_golden() -> WeightBundle {
    let layers = vec![
        Layer::pointwise(1, 3, vec![0.0, 0.0, 1.0], vec![0.0]),
        Layer::max_pool(1),
        Layer::concat(2, 0),
        Layer::pointwise(1, 2, vec![0.0, 1.0], vec![0.0]),
        Layer::pointwise(1, 2, vec![0.0, 0.0], vec![0.0]),
    ];
    WeightBundle::new(3, 99, 75.0, layers).unwrap()
}

#[test]
fn temporal_forward_pass_by_hand() {
    // mean range 35/3; rel = −5/3, 7/3, −2/3; features rel/2 + time:
    //   −5/6 → 0, 7/6, −1/3 + 1 = 2/3
    // anchor 1 (14 m) wins; residual 0.5 · 2 = 1 m → 15 m.
    let ctx = ContextPointSet::from_raw(&[
        raw(0.01, 0.0, 10.0, 0),
        raw(0.02, 0.01, 14.0, 0),
        raw(0.0, 0.0, 11.0, 1),
    ]);
    let out = anchor_net_infer(&ctx, &temporal_golden(), 75.0).unwrap();
    assert_eq!(out.anchor_logits.len(), 199);
    assert_eq!(out.anchor_logits[0], 0.0);
    assert!((out.anchor_logits[1] - 7.0 / 6.0).abs() < 1e-12);
    assert!((out.anchor_logits[2] - 2.0 / 3.0).abs() < 1e-12);
    assert!(out.anchor_logits[3..].iter().all(|&l| l == f64::NEG_INFINITY));
    assert_eq!(out.anchor, 1);
    assert!((out.predicted_range - 15.0).abs() < 1e-12);

    // Clamped to the sensor limit.
    let out = anchor_net_infer(&ctx, &temporal_golden(), 14.5).unwrap();
    assert_eq!(out.predicted_range, 14.5);
}

#[test]
fn intra_bundle_rejects_temporal_points() {
    let ctx = ContextPointSet::from_raw(&[raw(0.0, 0.0, 5.0, 1)]);
    assert!(matches!(
        anchor_net_infer(&ctx, &intra_golden(), 75.0),
        Err(Error::WeightShapeMismatch(_))
    ));
}

fn constant_frame(h: usize, w: usize, range: f64) -> RangeImage {
    RangeImage::from_parts(h, w, vec![range; h * w], vec![true; h * w]).unwrap()
}

#[test]
fn golden_bundle_codes_a_flat_frame_with_zero_residuals() {
    let (h, w) = (8, 30);
    let calib = small_calibration(h, w);
    let track = PoseTrack::constant(w, Pose::identity());
    let img = constant_frame(h, w, 12.3);
    let spec = QuantizationSpec::new(0.1).unwrap();
    let bundle = Arc::new(intra_golden());
    let kind = PredictorKind::AnchorNetIntra(bundle.clone());
    let layout = BlockLayout::new(4, 10).unwrap();

    let a = analyze_frame(&img, &calib, &track, spec, &kind, layout, None).unwrap();
    assert_eq!(a.block_residuals.len(), 6);
    for res in &a.block_residuals {
        // First pixel: no context, predicted as 0.
        assert_eq!(res.deltas()[0], quantize_code(12.3, 0.1));
        assert!(res.deltas()[1..].iter().all(|&d| d == 0));
    }

    let cf = encode_frame(&img, &calib, &track, spec, &kind, layout, None).unwrap();
    assert_eq!(cf.header.weight_digest, bundle.digest());
    let registry: WeightRegistry = [bundle.clone()].into_iter().collect();
    let decoded = decode_frame(&cf, &calib, &track, &registry, None).unwrap();
    assert_eq!(decoded, a.quantized);

    match decode_frame(&cf, &calib, &track, &WeightRegistry::new(), None) {
        Err(Error::UnknownWeights(msg)) => assert!(msg.contains(&bundle.digest_hex())),
        other => panic!("expected UnknownWeights, got {other:?}"),
    }
}

#[test]
fn rwgt_files_load_by_digest() {
    let dir = tempfile::tempdir().unwrap();
    let a = intra_golden();
    let b = temporal_golden();
    fs::write(dir.path().join("a.rwgt"), a.to_bytes()).unwrap();
    let mut file = fs::File::create(dir.path().join("b.RWGT")).unwrap();
    b.write_to(&mut file).unwrap();
    drop(file);
    fs::write(dir.path().join("notes.txt"), b"not a bundle").unwrap();

    let reg = WeightRegistry::load_dir(dir.path()).unwrap();
    assert_eq!(reg.len(), 2);
    for (bundle, name) in [(&a, "a.rwgt"), (&b, "b.RWGT")] {
        let bytes = fs::read(dir.path().join(name)).unwrap();
        let expected: [u8; 32] = Sha256::digest(&bytes).into();
        assert_eq!(bundle.digest(), expected);
        assert_eq!(reg.get(&expected).as_deref(), Some(bundle));
        let reread = WeightBundle::read_from(bytes.as_slice()).unwrap();
        assert_eq!(&reread, bundle);
    }
}

#[test]
fn malformed_rwgt_is_rejected() {
    let bytes = temporal_golden().to_bytes();
    assert!(WeightBundle::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(WeightBundle::from_bytes(&trailing).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(WeightBundle::from_bytes(&magic).is_err());
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(WeightBundle::from_bytes(&version).is_err());

    // Shape checks: a head whose input width does not match the concat output.
    let bad = vec![
        Layer::pointwise(1, 3, vec![0.0; 3], vec![0.0]),
        Layer::max_pool(1),
        Layer::concat(2, 0),
        Layer::pointwise(1, 3, vec![0.0; 3], vec![0.0]),
        Layer::pointwise(1, 3, vec![0.0; 3], vec![0.0]),
    ];
    assert!(WeightBundle::new(3, 99, 75.0, bad).is_err());

    // Kind and input dimension must agree.
    let intra = Arc::new(intra_golden());
    assert!(PredictorKind::AnchorNetTemporal(intra).validate().is_err());
    let temporal = Arc::new(temporal_golden());
    assert!(PredictorKind::AnchorNetIntra(temporal).validate().is_err());
}
