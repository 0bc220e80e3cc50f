use std::io::Write;

use banet::diffcheck::{self, correlation64, soft_argmin64};
use banet::io::{self, ByteOrder, DisparityFile};
use banet::nn::ConvSpec;
use banet::tensor::{conv2d, instrument, ConvParams};
use banet::volume::{build_correlation, soft_argmin, CostVolume};
use banet::{Shape, Tensor, WeightStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::{DataError, SelftestArgs, EXIT_OK, EXIT_SELFTEST};

fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn conv_oracle(x: &Tensor, k: &Tensor, pad: usize) -> Tensor {
    let (s, ks) = (x.shape(), k.shape());
    let (oh, ow) = (s.h + 2 * pad - ks.h + 1, s.w + 2 * pad - ks.w + 1);
    Tensor::from_fn(Shape::new(s.n, ks.n, oh, ow), |n, o, y, xx| {
        let mut acc = 0.0;
        for c in 0..s.c {
            for ky in 0..ks.h {
                for kx in 0..ks.w {
                    let (iy, ix) = ((y + ky) as isize - pad as isize, (xx + kx) as isize - pad as isize);
                    if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                        acc += k.at(o, c, ky, kx) * x.at(n, c, iy as usize, ix as usize);
                    }
                }
            }
        }
        acc
    })
}

fn max_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max)
}

fn oracle_checks() -> Result<Vec<Value>, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut lines = Vec::new();

    let x = random(Shape::new(1, 3, 8, 8), &mut rng);
    let k = random(Shape::new(4, 3, 3, 3), &mut rng);
    let fast = conv2d(&x, &k, None, ConvParams::new(1, 1))?;
    let err = fast.max_abs_diff(&conv_oracle(&x, &k, 1)) as f64;
    lines.push(json!({ "check": "oracle_conv2d", "pass": err <= 1e-5, "max_abs_error": err }));

    let (l, r) = (random(Shape::new(1, 4, 6, 12), &mut rng), random(Shape::new(1, 4, 6, 12), &mut rng));
    let fast = build_correlation(&l, &r, 8)?;
    let err = max_diff(fast.tensor().data(), &correlation64(&l.to_f64(), &r.to_f64(), 8).data);
    lines.push(json!({ "check": "oracle_correlation", "pass": err <= 1e-6, "max_abs_error": err }));

    let volume = random(Shape::new(1, 12, 5, 5), &mut rng).scale(4.0);
    let fast = soft_argmin(&CostVolume::new(volume.clone()))?;
    let err = max_diff(fast.tensor().data(), &soft_argmin64(&volume.to_f64()).data);
    lines.push(json!({ "check": "oracle_soft_argmin", "pass": err <= 1e-5, "max_abs_error": err }));

    let spec = ConvSpec::conv(3, 5, 3, 2);
    let kernel = random(Shape::new(5, 3, 3, 3), &mut rng);
    let input = random(Shape::new(1, 3, 9, 7), &mut rng);
    let (res, counted) = instrument::count_macs(|| conv2d(&input, &kernel, None, ConvParams::new(2, 1)));
    res?;
    let analytic = spec.macs((9, 7));
    lines
        .push(json!({ "check": "mac_counter", "pass": counted == analytic, "counted": counted, "analytic": analytic }));
    Ok(lines)
}

fn format_checks() -> Result<Vec<Value>, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut lines = Vec::new();
    let values: Vec<f32> = (0..48).map(|_| rng.gen_range(0.01..255.0)).collect();
    let d = DisparityFile::dense(8, 6, values)?;

    let pfm = io::encode_pfm(&d, ByteOrder::Little);
    let exact = io::decode_pfm(&pfm, "selftest")? == d;
    let mut corrupt = pfm.clone();
    corrupt[0] ^= 0x20;
    let detected = io::decode_pfm(&corrupt, "selftest").is_err();
    lines.push(json!({ "check": "pfm_round_trip", "pass": exact && detected, "bit_exact": exact, "corruption_detected": detected }));

    let png = io::encode_kitti_png(&d)?;
    let back = io::decode_kitti_png(&png, "selftest")?;
    let err = back.values.iter().zip(&d.values).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    let mut corrupt = png.clone();
    corrupt[16] ^= 0x01;
    let detected = io::decode_kitti_png(&corrupt, "selftest").is_err();
    let pass = err <= 1.0 / 512.0 && detected;
    lines.push(
        json!({ "check": "kitti_round_trip", "pass": pass, "max_abs_error": err, "corruption_detected": detected }),
    );

    let mut store = WeightStore::new();
    store.insert("layer.kernel", vec![2, 3], (0..6).map(|i| i as f32 * 0.5).collect())?;
    let bytes = store.to_bytes();
    let again = WeightStore::from_bytes(&bytes, "selftest")?.to_bytes() == bytes;
    let mut corrupt = bytes.clone();
    let last_payload = bytes.len() - 5;
    corrupt[last_payload] ^= 0x01;
    let detected = WeightStore::from_bytes(&corrupt, "selftest").is_err();
    lines.push(json!({ "check": "weights_round_trip", "pass": again && detected, "bit_exact": again, "corruption_detected": detected }));
    Ok(lines)
}

pub fn run(a: &SelftestArgs, out: &mut dyn Write) -> Result<i32, DataError> {
    let mut lines: Vec<Value> = diffcheck::run_suite(a.instances.max(1), a.perturb_grad)
        .into_iter()
        .map(|r| {
            let pass = r.passed();
            json!({ "check": "gradient", "pass": pass, "report": r })
        })
        .collect();
    lines.extend(oracle_checks()?);
    lines.extend(format_checks()?);
    let failed = lines.iter().filter(|l| l["pass"] != json!(true)).count();
    for line in &lines {
        writeln!(out, "{line}")?;
    }
    writeln!(out, "{}", json!({ "summary": { "checks": lines.len(), "failed": failed } }))?;
    Ok(if failed == 0 { EXIT_OK } else { EXIT_SELFTEST })
}
