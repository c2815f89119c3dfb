mod support;

use num_complex::Complex64;
use proptest::prelude::*;
use support::oracles::random_volume;
use wcrr_core::forward::{generate_trajectory, synth_coils, KSpaceData, TrajectoryKind};
use wcrr_core::io::{
    decode_checkpoint_manifest, decode_cmap, decode_cvol, decode_kdat, decode_ktrj, decode_pgm, encode_cmap,
    encode_cvol, encode_kdat, encode_ktrj, encode_pgm, load_checkpoint, read_cmap, read_cvol, read_kdat, read_ktrj,
    save_checkpoint, write_cmap, write_cvol, write_kdat, write_ktrj, GrayImage, CHECKPOINT_MANIFEST,
};
use wcrr_core::wcrr::{ModelConfig, RotationPreset, WcrrModel};
use wcrr_core::ComplexVolume;

/// Values that survive the f32 payload unchanged.
fn f32_exact(v: &ComplexVolume) -> ComplexVolume {
    ComplexVolume::from_vec(
        v.dims(),
        v.data().iter().map(|z| Complex64::new(z.re as f32 as f64, z.im as f32 as f64)).collect(),
    )
    .unwrap()
}

#[test]
fn file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let v = f32_exact(&random_volume([3, 4, 5], 1, 2.0));
    write_cvol(&dir.path().join("v.cvol"), &v).unwrap();
    assert_eq!(read_cvol(&dir.path().join("v.cvol")).unwrap(), v);

    let t = generate_trajectory(&TrajectoryKind::Radial3d { samples_per_spoke: 4 }, 20).unwrap();
    write_ktrj(&dir.path().join("t.ktrj"), &t).unwrap();
    let back = read_ktrj(&dir.path().join("t.ktrj")).unwrap();
    assert_eq!(back.len(), t.len());
    for (a, b) in back.points().iter().zip(t.points()) {
        assert!((0..3).all(|i| (a[i] - b[i]).abs() < 1e-6));
    }

    let data: Vec<Complex64> = (0..6).map(|i| Complex64::new(i as f64 * 0.5, -(i as f64))).collect();
    let y = KSpaceData::new(2, 3, data).unwrap();
    write_kdat(&dir.path().join("y.kdat"), &y).unwrap();
    assert_eq!(read_kdat(&dir.path().join("y.kdat")).unwrap(), y);

    let coils = synth_coils([4, 4, 4], 3).unwrap();
    write_cmap(&dir.path().join("c.cmap"), &coils).unwrap();
    let back = read_cmap(&dir.path().join("c.cmap")).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in back.maps().iter().zip(coils.maps()) {
        assert!(a.max_abs_diff(b) < 1e-6);
    }
    assert!(read_cvol(&dir.path().join("missing.cvol")).is_err());
}

#[test]
fn decoders_reject_malformed_input() {
    let v = random_volume([2, 2, 2], 2, 1.0);
    let good = encode_cvol(&v).unwrap();
    assert!(decode_cvol(&good[..good.len() - 1]).is_err());
    let mut long = good.clone();
    long.push(0);
    assert!(decode_cvol(&long).is_err());
    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(decode_cvol(&magic).is_err());
    let mut nan = good.clone();
    let n = nan.len();
    nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(decode_cvol(&nan).is_err());
    let mut zero_dim = good;
    zero_dim[8..12].copy_from_slice(&0u32.to_le_bytes());
    assert!(decode_cvol(&zero_dim).is_err());

    let t = generate_trajectory(&TrajectoryKind::Radial3d { samples_per_spoke: 4 }, 8).unwrap();
    let mut bytes = encode_ktrj(&t).unwrap();
    let n = bytes.len();
    bytes[n - 4..].copy_from_slice(&2.0f32.to_le_bytes());
    assert!(decode_ktrj(&bytes).is_err(), "frequency outside the sampling cube");

    let y = KSpaceData::zeros(1, 2);
    let bytes = encode_kdat(&y).unwrap();
    assert!(decode_kdat(&bytes[..bytes.len() - 8]).is_err());
    assert!(decode_kdat(&encode_cvol(&v).unwrap()).is_err());

    let coils = synth_coils([2, 2, 2], 2).unwrap();
    let mut bytes = encode_cmap(&coils).unwrap();
    let n = bytes.len();
    bytes[n - 8..n - 4].copy_from_slice(&5.0f32.to_le_bytes());
    assert!(decode_cmap(&bytes).is_err(), "coil maps no longer normalized");

    assert!(decode_pgm(b"P2\n1 1\n255\n\x00").is_err());
    assert!(decode_pgm(b"P5\n2 1\n255\n\x00").is_err());
    assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
}

#[test]
fn pgm_with_comments() {
    let img = decode_pgm(b"P5\n# made by hand\n2 2\n# max\n255\n\x00\x10\x20\xff").unwrap();
    assert_eq!(img, GrayImage { width: 2, height: 2, pixels: vec![0, 16, 32, 255] });
}

fn model() -> WcrrModel {
    WcrrModel::init(&ModelConfig {
        channel_plan: vec![2, 3, 4],
        rotations: RotationPreset::AxisQuarterTurns,
        norm_grid: [8, 8, 8],
        seed: 3,
        ..ModelConfig::default()
    })
    .unwrap()
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = model();
    let mut p = m.potentials().clone();
    p.c.iter_mut().enumerate().for_each(|(i, c)| *c = 0.01 * i as f64);
    m.set_potentials(p).unwrap();
    save_checkpoint(dir.path(), &m).unwrap();
    let back = load_checkpoint(dir.path()).unwrap();
    assert_eq!(back.param_count(), m.param_count());
    assert_eq!(back.rotations().len(), m.rotations().len());
    assert!((back.bank().norm() - m.bank().norm()).abs() <= 1e-5 * m.bank().norm());
    let x = random_volume([6, 6, 6], 4, 0.1);
    let (a, b) = (m.value(&x, 0.04).unwrap(), back.value(&x, 0.04).unwrap());
    assert!((a - b).abs() <= 1e-5 * a.abs().max(1e-12), "{a} vs {b}");
    let (ga, gb) = (m.grad(&x, 0.04).unwrap(), back.grad(&x, 0.04).unwrap());
    assert!(ga.sub(&gb).norm() <= 1e-5 * ga.norm());
    // a second save of the loaded model is byte-identical
    let dir2 = tempfile::tempdir().unwrap();
    save_checkpoint(dir2.path(), &back).unwrap();
    for t in decode_checkpoint_manifest(&std::fs::read_to_string(dir.path().join(CHECKPOINT_MANIFEST)).unwrap())
        .unwrap()
        .tensors
    {
        assert_eq!(std::fs::read(dir.path().join(&t.file)).unwrap(), std::fs::read(dir2.path().join(&t.file)).unwrap());
    }
}

#[test]
fn checkpoint_rejects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &model()).unwrap();
    let text = std::fs::read_to_string(dir.path().join(CHECKPOINT_MANIFEST)).unwrap();
    assert!(decode_checkpoint_manifest(&text.replace("layer0.f32", "../layer0.f32")).is_err());
    assert!(decode_checkpoint_manifest(&text.replace("format = 1", "format = 2")).is_err());
    assert!(decode_checkpoint_manifest(&format!("{text}\nextra = 1\n")).is_err());
    std::fs::write(dir.path().join("spline.f32"), [0u8; 3]).unwrap();
    assert!(load_checkpoint(dir.path()).is_err());
    assert!(load_checkpoint(&dir.path().join("absent")).is_err());
}

proptest! {
    #[test]
    fn cvol_codec_round_trips(nx in 1usize..5, ny in 1usize..5, nz in 1usize..5, seed in 0u64..1000) {
        let v = f32_exact(&random_volume([nx, ny, nz], seed, 10.0));
        prop_assert_eq!(decode_cvol(&encode_cvol(&v).unwrap()).unwrap(), v);
    }

    #[test]
    fn pgm_codec_round_trips(w in 1usize..9, h in 1usize..9, seed in 0u64..1000) {
        let pixels = (0..w * h).map(|i| ((i as u64 * 31 + seed) % 256) as u8).collect();
        let img = GrayImage { width: w, height: h, pixels };
        prop_assert_eq!(decode_pgm(&encode_pgm(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn decoders_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_cvol(&bytes);
        let _ = decode_ktrj(&bytes);
        let _ = decode_kdat(&bytes);
        let _ = decode_cmap(&bytes);
        let _ = decode_pgm(&bytes);
    }
}
