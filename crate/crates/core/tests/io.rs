use fpnr_core::io::{
    read_image, read_pgm, read_raw_f32, sidecar_path, write_image, write_pgm, write_raw_f32,
};
use fpnr_core::{FpnrError, Image, ImageIoError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn raw_f32_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.f32");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let im = Image::<f32>::from_fn(7, 9, |_, _| rng.random_range(-1e6f32..1e6));
    write_raw_f32(&path, &im).unwrap();
    assert!(sidecar_path(&path).exists());
    let back: Image<f32> = read_raw_f32(&path).unwrap();
    assert_eq!(back.dims(), (7, 9));
    assert!(im
        .data()
        .iter()
        .zip(back.data())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn pgm_round_trips_integer_images() {
    let dir = tempfile::tempdir().unwrap();
    let p8 = dir.path().join("a.pgm");
    let im = Image::<f64>::from_fn(5, 6, |y, x| ((y * 37 + x * 11) % 256) as f64);
    write_pgm(&p8, &im, false).unwrap();
    assert_eq!(read_pgm(&p8).unwrap(), im);
    let p16 = dir.path().join("b.pgm");
    let im16 = Image::<f64>::from_fn(3, 4, |y, x| (y * 20000 + x * 300) as f64);
    write_pgm(&p16, &im16, true).unwrap();
    assert_eq!(read_pgm(&p16).unwrap(), im16);
    let bytes = std::fs::read(&p16).unwrap();
    assert!(bytes.starts_with(b"P5\n4 3\n65535\n"));
    // big-endian: the second sample (300) is 0x01 0x2c
    let payload = &bytes[bytes.len() - 24..];
    assert_eq!(&payload[2..4], &[0x01, 0x2c]);
}

#[test]
fn dispatch_by_extension() {
    let dir = tempfile::tempdir().unwrap();
    let im = Image::<f64>::from_fn(4, 4, |y, x| (y * 4 + x) as f64);
    for name in ["x.pgm", "x.f32", "x.raw"] {
        let p = dir.path().join(name);
        write_image(&p, &im).unwrap();
        assert_eq!(read_image::<f64>(&p).unwrap(), im, "{name}");
    }
    let bad = dir.path().join("x.png");
    assert!(matches!(
        write_image(&bad, &im),
        Err(FpnrError::Image(ImageIoError::UnsupportedFormat { .. }))
    ));
}

#[test]
fn file_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.pgm");
    std::fs::write(&p, b"P5\n4 4\n255\n\x01\x02").unwrap();
    assert!(matches!(
        read_pgm(&p),
        Err(FpnrError::Image(ImageIoError::TruncatedPayload {
            expected: 16,
            found: 2,
            ..
        }))
    ));
    std::fs::write(&p, b"P5\n4\n").unwrap();
    assert!(matches!(
        read_pgm(&p),
        Err(FpnrError::Image(ImageIoError::MalformedHeader { .. }))
    ));
    std::fs::write(&p, b"P5 99999999 99999999 255\n").unwrap();
    assert!(matches!(
        read_pgm(&p),
        Err(FpnrError::Image(ImageIoError::DimensionOverflow { .. }))
    ));
    assert!(matches!(
        read_pgm(&dir.path().join("none.pgm")),
        Err(FpnrError::Image(ImageIoError::Io { .. }))
    ));

    let raw = dir.path().join("r.f32");
    write_raw_f32(&raw, &Image::<f32>::filled(3, 3, 1.0)).unwrap();
    std::fs::write(&raw, [0u8; 10]).unwrap();
    assert!(matches!(
        read_raw_f32::<f32>(&raw),
        Err(FpnrError::Image(ImageIoError::TruncatedPayload {
            expected: 36,
            ..
        }))
    ));
    std::fs::write(sidecar_path(&raw), "{\"height\": 3}").unwrap();
    assert!(matches!(
        read_raw_f32::<f32>(&raw),
        Err(FpnrError::Image(ImageIoError::MalformedHeader { .. }))
    ));
}
