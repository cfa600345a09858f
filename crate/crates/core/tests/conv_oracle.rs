//! conv2d against a brute-force oracle over the full option grid:
//! dilation x groups x padding mode, plus stride. The oracle indexes source
//! coordinates directly (no materialised padding) so the two implementations
//! share nothing but the definition.

use demoire_core::tensor::{conv2d, Conv2dSpec, PadMode, PadSpec, Tensor};

fn coord(mode: PadMode, i: i64, n: usize) -> Option<usize> {
    if i >= 0 && (i as usize) < n {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Replicate => Some(if i < 0 { 0 } else { n - 1 }),
        PadMode::Reflect => Some(if i < 0 {
            (-i) as usize
        } else {
            2 * (n - 1) - i as usize
        }),
    }
}

#[allow(clippy::too_many_arguments)]
fn oracle(
    x: &[f32],
    (n, cin, h, w): (usize, usize, usize, usize),
    wgt: &[f32],
    (cout, icg, kh, kw): (usize, usize, usize, usize),
    bias: Option<&[f32]>,
    stride: usize,
    dil: usize,
    mode: PadMode,
    margin: usize,
) -> Vec<f32> {
    let groups = cin / icg;
    let ocg = cout / groups;
    let ph = h + 2 * margin;
    let pw = w + 2 * margin;
    let oh = (ph - ((kh - 1) * dil + 1)) / stride + 1;
    let ow = (pw - ((kw - 1) * dil + 1)) / stride + 1;
    let mut out = Vec::with_capacity(n * cout * oh * ow);
    for b in 0..n {
        for oc in 0..cout {
            let grp = oc / ocg;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0f64, |bv| bv[oc] as f64);
                    for icl in 0..icg {
                        let ic = grp * icg + icl;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let sy = (oy * stride + ky * dil) as i64 - margin as i64;
                                let sx = (ox * stride + kx * dil) as i64 - margin as i64;
                                let (Some(sy), Some(sx)) = (coord(mode, sy, h), coord(mode, sx, w))
                                else {
                                    continue;
                                };
                                let xv = x[((b * cin + ic) * h + sy) * w + sx] as f64;
                                let wv = wgt[((oc * icg + icl) * kh + ky) * kw + kx] as f64;
                                acc += xv * wv;
                            }
                        }
                    }
                    out.push(acc as f32);
                }
            }
        }
    }
    out
}

fn seeded(seed: u64, n: usize) -> Vec<f32> {
    demoire_core::gradcheck::uniform(seed, n, -1.0, 1.0)
        .into_iter()
        .map(|v| v as f32)
        .collect()
}

#[test]
fn conv_matches_oracle_across_dilation_groups_padding() {
    let mut worst = 0.0f32;
    let mut cases = 0usize;
    for &dil in &[1usize, 2, 4] {
        for &depthwise in &[false, true] {
            for &mode in &[PadMode::Zero, PadMode::Replicate, PadMode::Reflect] {
                let (n, cin, h, w) = (1usize, 4usize, 11usize, 10usize);
                let (kh, kw) = (3usize, 3usize);
                let (groups, icg, cout) = if depthwise {
                    (cin, 1, cin)
                } else {
                    (1, cin, 5)
                };
                let margin = dil; // keeps extents; also a legal reflect margin here
                let x = seeded(1000 + cases as u64, n * cin * h * w);
                let wd = seeded(2000 + cases as u64, cout * icg * kh * kw);
                let bd = seeded(3000 + cases as u64, cout);

                let xt = Tensor::from_vec("x", x.clone(), &[n, cin, h, w]).unwrap();
                let wt = Tensor::from_vec("w", wd.clone(), &[cout, icg, kh, kw]).unwrap();
                let bt = Tensor::from_vec("b", bd.clone(), &[cout]).unwrap();
                let spec = Conv2dSpec {
                    stride: 1,
                    dilation: dil,
                    groups,
                    pad: PadSpec::uniform(mode, margin),
                };
                let got = conv2d(&xt, &wt, Some(&bt), &spec).unwrap();
                let want = oracle(
                    &x,
                    (n, cin, h, w),
                    &wd,
                    (cout, icg, kh, kw),
                    Some(&bd),
                    1,
                    dil,
                    mode,
                    margin,
                );
                assert_eq!(got.numel(), want.len());
                for (g, e) in got.data().iter().zip(&want) {
                    let d = (g - e).abs();
                    if d > worst {
                        worst = d;
                    }
                    assert!(d <= 1e-6, "case {cases}: {g} vs {e} (diff {d})");
                }
                cases += 1;
            }
        }
    }
    assert_eq!(cases, 18);
    println!("conv grid worst abs diff: {worst:.2e}");
}

#[test]
fn strided_conv_matches_oracle() {
    for &stride in &[2usize, 3] {
        let (n, cin, h, w) = (2usize, 3usize, 12usize, 9usize);
        let cout = 4usize;
        let x = seeded(71, n * cin * h * w);
        let wd = seeded(72, cout * cin * 9);
        let xt = Tensor::from_vec("x", x.clone(), &[n, cin, h, w]).unwrap();
        let wt = Tensor::from_vec("w", wd.clone(), &[cout, cin, 3, 3]).unwrap();
        let spec = Conv2dSpec::same3x3(1).with_stride(stride);
        let got = conv2d(&xt, &wt, None, &spec).unwrap();
        let want = oracle(
            &x,
            (n, cin, h, w),
            &wd,
            (cout, cin, 3, 3),
            None,
            stride,
            1,
            PadMode::Zero,
            1,
        );
        for (g, e) in got.data().iter().zip(&want) {
            assert!((g - e).abs() <= 1e-6);
        }
    }
}

#[test]
fn asymmetric_padding_shifts_output() {
    // pad only the top: output row 0 sees the zero margin, bottom rows do not
    let x = Tensor::from_vec("x", vec![1.0f32; 16], &[1, 1, 4, 4]).unwrap();
    let w = Tensor::from_vec("w", vec![1.0f32; 9], &[1, 1, 3, 3]).unwrap();
    let spec = Conv2dSpec {
        stride: 1,
        dilation: 1,
        groups: 1,
        pad: PadSpec {
            mode: PadMode::Zero,
            top: 2,
            bottom: 0,
            left: 1,
            right: 1,
        },
    };
    let y = conv2d(&x, &w, None, &spec).unwrap();
    assert_eq!(y.dims(), &[1, 1, 4, 4]);
    // top output row: kernel rows -2..0 of the image => only image row 0 in reach
    assert_eq!(y.data()[1], 3.0);
    // bottom row sits fully inside: 3x3 ones over ones, minus the column margin
    assert_eq!(y.data()[13], 9.0);
}
