mod common;

use banet::io::{
    self, decode_kitti_png, decode_pfm, encode_kitti_png, encode_pfm, load_image, load_image_pair, read_disparity,
    read_mask, ByteOrder, DisparityFile, KITTI_MAX,
};
use banet::{init_random, ModelConfig, Shape, WeightStore};
use common::{rng, uniform};
use rand::Rng;

fn sample(w: usize, h: usize, seed: u64) -> DisparityFile {
    let values = uniform(Shape::new(1, 1, h, w), &mut rng(seed), 0.0, 200.0).into_vec();
    DisparityFile::dense(w, h, values).unwrap()
}

#[test]
fn pfm_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut d = sample(13, 7, 91);
    d.mask[5] = false;
    d.values[5] = 0.0;
    let path = dir.path().join("d.pfm");
    io::write_pfm(&path, &d).unwrap();
    assert_eq!(io::read_pfm(&path).unwrap(), d);
    assert_eq!(read_disparity(&path).unwrap(), d);
    let big = encode_pfm(&d, ByteOrder::Big);
    assert_eq!(decode_pfm(&big, "big").unwrap(), d);
}

#[test]
fn pfm_header_corruption_is_detected() {
    let d = sample(6, 5, 92);
    let bytes = encode_pfm(&d, ByteOrder::Little);
    let header_end = bytes.iter().enumerate().filter(|(_, &b)| b == b'\n').nth(1).map(|(i, _)| i).unwrap();
    // magic, newline and dimension bytes
    for i in 0..=header_end {
        for flip in [0x01u8, 0x10, 0x40] {
            let mut bad = bytes.clone();
            bad[i] ^= flip;
            assert!(decode_pfm(&bad, "c").is_err(), "byte {i} flip {flip:#x} went unnoticed");
        }
    }
    assert!(decode_pfm(&bytes[..bytes.len() - 1], "c").is_err());
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(decode_pfm(&longer, "c").is_err());
}

#[test]
fn kitti_round_trip_within_half_quantum() {
    let dir = tempfile::tempdir().unwrap();
    let mut d = sample(17, 9, 93);
    d.mask[3] = false;
    d.values[3] = 0.0;
    let path = dir.path().join("d.png");
    io::write_kitti_png(&path, &d).unwrap();
    let back = read_disparity(&path).unwrap();
    assert_eq!(back.mask, d.mask);
    let err = back.values.iter().zip(&d.values).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(err <= 1.0 / 512.0, "{err}");
}

#[test]
fn kitti_quantization_bound_holds_on_random_values() {
    let mut r = rng(94);
    for _ in 0..20 {
        let values: Vec<f32> = (0..64).map(|_| r.gen_range(0.0..KITTI_MAX)).collect();
        let d = DisparityFile::dense(8, 8, values).unwrap();
        let back = decode_kitti_png(&encode_kitti_png(&d).unwrap(), "k").unwrap();
        for (a, b) in back.values.iter().zip(&d.values) {
            assert!((a - b).abs() <= 1.0 / 512.0 + 1e-6 || *b < 1.0 / 256.0);
        }
    }
    let too_big = DisparityFile::dense(1, 1, vec![KITTI_MAX + 1.0]).unwrap();
    assert!(encode_kitti_png(&too_big).is_err());
}

#[test]
fn kitti_single_byte_corruption_is_detected() {
    let bytes = encode_kitti_png(&sample(8, 8, 95)).unwrap();
    let mut missed = Vec::new();
    for i in 0..bytes.len() {
        let mut bad = bytes.clone();
        bad[i] ^= 0x04;
        if decode_kitti_png(&bad, "k").is_ok() {
            missed.push(i);
        }
    }
    assert!(missed.is_empty(), "undetected corrupt bytes at {missed:?}");
}

#[test]
fn weight_file_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let store = init_random(&ModelConfig::baseline(), 96).unwrap();
    let path = dir.path().join("w.banw");
    store.save(&path).unwrap();
    let back = WeightStore::load(&path).unwrap();
    assert_eq!(back.to_bytes(), store.to_bytes());
    let mut small = WeightStore::new();
    small.insert("a.kernel", vec![2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap();
    small.insert("a.bias", vec![2], vec![0.0, 1.0]).unwrap();
    let bytes = small.to_bytes();
    for i in 0..bytes.len() {
        let mut bad = bytes.clone();
        bad[i] ^= 0x01;
        assert!(WeightStore::from_bytes(&bad, "w").is_err(), "byte {i}");
    }
    assert!(WeightStore::from_bytes(&bytes[..bytes.len() - 1], "w").is_err());
}

fn write_rgb(path: &std::path::Path, w: u32, h: u32, seed: u64) -> Vec<u8> {
    let mut r = rng(seed);
    let raw: Vec<u8> = (0..w * h * 3).map(|_| r.gen()).collect();
    image::save_buffer(path, &raw, w, h, image::ColorType::Rgb8).unwrap();
    raw
}

#[test]
fn png_and_ppm_load_identically() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("a.png");
    let raw = write_rgb(&png, 9, 5, 97);
    let ppm = dir.path().join("a.ppm");
    image::save_buffer(&ppm, &raw, 9, 5, image::ColorType::Rgb8).unwrap();
    let a = load_image(&png).unwrap();
    assert_eq!(a, load_image(&ppm).unwrap());
    assert_eq!(a.shape(), Shape::new(1, 3, 5, 9));
    let expected = (raw[0] as f32 / 255.0 - io::IMAGENET_MEAN[0]) / io::IMAGENET_STD[0];
    assert!((a.at(0, 0, 0, 0) - expected).abs() <= 1e-6);
}

#[test]
fn image_pair_size_mismatch_names_both_files() {
    let dir = tempfile::tempdir().unwrap();
    let (l, r) = (dir.path().join("left.png"), dir.path().join("right.png"));
    write_rgb(&l, 8, 6, 98);
    write_rgb(&r, 8, 7, 99);
    let err = load_image_pair(&l, &r).unwrap_err().to_string();
    assert!(err.contains("left.png") && err.contains("right.png"), "{err}");
    let missing = dir.path().join("none.png");
    assert!(load_image_pair(&l, &missing).unwrap_err().to_string().contains("none.png"));
}

#[test]
fn grayscale_and_masks() {
    let dir = tempfile::tempdir().unwrap();
    let gray = dir.path().join("g.png");
    image::save_buffer(&gray, &[0], 1, 1, image::ColorType::L8).unwrap();
    assert!(load_image(&gray).is_err());
    let mask = dir.path().join("m.png");
    image::save_buffer(&mask, &[0, 255, 1, 0, 0, 9], 3, 2, image::ColorType::L8).unwrap();
    let (w, h, m) = read_mask(&mask).unwrap();
    assert_eq!((w, h), (3, 2));
    assert_eq!(m, vec![false, true, true, false, false, true]);
}

#[test]
fn attention_png_rounds_half_up() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.png");
    let t = banet::Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.0, 0.5, 1.0]).unwrap();
    io::write_gray8_png(&path, &t).unwrap();
    let img = image::open(&path).unwrap().into_luma8();
    assert_eq!(img.into_raw(), vec![0, 128, 255]);
}
