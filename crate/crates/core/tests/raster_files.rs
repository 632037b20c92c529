use adage::raster::{
    decode_mask, decode_tensor, encode_mask, encode_pgm, encode_tensor, read_mask, read_tensor, write_mask,
    write_tensor, Mask2D, Palette, RasterError, TensorChw,
};

fn header(magic: &[u8; 4], dims: &[u32]) -> Vec<u8> {
    let mut out = magic.to_vec();
    out.extend_from_slice(&1u32.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

#[test]
fn tensor_layout_is_little_endian_chw() {
    let mut t = TensorChw::zeros(3, 4, 4);
    t.set(0, 0, 0, 1.5);
    t.set(2, 3, 1, -2.0);
    let bytes = encode_tensor(&t);
    assert_eq!(bytes.len(), 20 + 3 * 4 * 4 * 4);
    assert_eq!(&bytes[..20], header(b"ADGT", &[3, 4, 4]).as_slice());
    assert_eq!(&bytes[20..24], &[0x00, 0x00, 0xC0, 0x3F]);
    let idx = (2 * 4 + 3) * 4 + 1;
    assert_eq!(&bytes[20 + 4 * idx..24 + 4 * idx], &(-2.0f32).to_le_bytes());
    assert_eq!(decode_tensor(&bytes).unwrap(), t);
}

#[test]
fn nan_reports_its_flat_index() {
    let mut bytes = header(b"ADGT", &[1, 2, 2]);
    for v in [0.0f32, 1.0, 2.0, f32::NAN] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    assert!(matches!(decode_tensor(&bytes), Err(RasterError::NonFiniteValue(3))));
}

#[test]
fn truncated_and_oversized_payloads_are_rejected() {
    let bytes = encode_tensor(&TensorChw::filled(2, 3, 3, 0.5));
    assert!(matches!(
        decode_tensor(&bytes[..bytes.len() - 1]),
        Err(RasterError::TruncatedPayload { .. })
    ));
    let mut long = bytes.clone();
    long.push(0);
    assert!(decode_tensor(&long).is_err());
    assert!(decode_tensor(&bytes[..10]).is_err());
}

#[test]
fn wrong_magic_version_and_zero_dims() {
    let good = encode_tensor(&TensorChw::zeros(1, 1, 1));
    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(decode_tensor(&bad), Err(RasterError::MagicMismatch { .. })));
    let mut bad = good.clone();
    bad[4] = 9;
    assert!(matches!(decode_tensor(&bad), Err(RasterError::UnsupportedVersion(9))));
    let zero = header(b"ADGT", &[1, 0, 1]);
    assert!(matches!(decode_tensor(&zero), Err(RasterError::ZeroDimension(_))));
    // mask bytes are not a tensor
    assert!(decode_tensor(&encode_mask(&Mask2D::filled(2, 2, 1))).is_err());
}

#[test]
fn large_mask_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ones.adgm");
    let m = Mask2D::filled(256, 256, 1);
    write_mask(&m, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), 16 + 256 * 256);
    assert_eq!(&bytes[..16], header(b"ADGM", &[256, 256]).as_slice());
    let back = read_mask(&path).unwrap();
    assert_eq!(back.count_nonzero(), 256 * 256);
    back.validate_binary().unwrap();
    assert!(decode_mask(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn tensor_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.adgt");
    let t = TensorChw::new(3, 2, 2, (0..12).map(|i| i as f32 * 0.25 - 1.0).collect()).unwrap();
    write_tensor(&t, &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 20 + 48);
    assert_eq!(read_tensor(&path).unwrap(), t);
    assert!(read_tensor(dir.path().join("missing.adgt")).is_err());
}

#[test]
fn pgm_uses_palette_levels() {
    let m = Mask2D::new(2, 3, vec![0, 1, 255, 1, 0, 255]).unwrap();
    let palette = Palette::for_groups(2, 255);
    let bytes = encode_pgm(&m, &palette).unwrap();
    let head = b"P5\n3 2\n255\n";
    assert_eq!(&bytes[..head.len()], head);
    assert_eq!(&bytes[head.len()..], &[255, 55, 0, 55, 255, 0]);
    let sparse = Palette::new().with(0, 10);
    assert!(matches!(
        encode_pgm(&m, &sparse),
        Err(RasterError::MissingPaletteEntry(1))
    ));
}

#[test]
fn categories_are_checked_against_the_group_count() {
    let m = Mask2D::new(1, 3, vec![0, 2, 1]).unwrap();
    assert!(m.validate_categories(3, "label").is_ok());
    assert!(matches!(
        m.validate_categories(2, "label"),
        Err(RasterError::RoleViolation { index: 1, value: 2, .. })
    ));
    assert!(m.validate_binary().is_err());
}
