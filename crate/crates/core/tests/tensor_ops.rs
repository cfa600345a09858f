//! Forward semantics of the tensor ops: hand-computed cases, closed forms,
//! and shape/error contracts.

use demoire_core::tensor::{
    concat, conv2d, layer_norm_channels, pad2d, Conv2dSpec, PadMode, PadSpec, Tensor,
};
use demoire_core::Error;

fn close(a: f32, b: f32, tol: f32) -> bool {
    (a - b).abs() <= tol
}

fn t32(data: &[f32], dims: &[usize]) -> Tensor<f32> {
    Tensor::from_vec("test", data.to_vec(), dims).unwrap()
}

// conv2d

#[test]
fn conv_impulse_stamps_kernel() {
    // centre impulse, one 3x3 kernel: output is the kernel flipped... no,
    // correlation convention: output around the centre equals the kernel
    // mirrored through the impulse. Check all 9 positions explicitly.
    let mut img = vec![0.0f32; 25];
    img[12] = 1.0; // (2,2) of 5x5
    let x = t32(&img, &[1, 1, 5, 5]);
    let k: Vec<f32> = vec![1., 2., 3., 4., 5., 6., 7., 8., 9.];
    let w = t32(&k, &[1, 1, 3, 3]);
    let y = conv2d(&x, &w, None, &Conv2dSpec::same3x3(1)).unwrap();
    assert_eq!(y.dims(), &[1, 1, 5, 5]);
    let out = y.data();
    for ky in 0..3 {
        for kx in 0..3 {
            // out[2 - (ky-1), 2 - (kx-1)] accumulates k[ky,kx]
            let oy = 3 - ky;
            let ox = 3 - kx;
            assert_eq!(out[oy * 5 + ox], k[ky * 3 + kx]);
        }
    }
    assert_eq!(out[0], 0.0);
}

#[test]
fn conv_1x1_identity_weight_is_identity() {
    let x = t32(&(0..2 * 3 * 4 * 4).map(|i| i as f32 * 0.1).collect::<Vec<_>>(), &[2, 3, 4, 4]);
    // 3x3 identity matrix as 1x1 conv weights
    let mut w = vec![0.0f32; 9];
    w[0] = 1.0;
    w[4] = 1.0;
    w[8] = 1.0;
    let w = t32(&w, &[3, 3, 1, 1]);
    let y = conv2d(&x, &w, None, &Conv2dSpec::unit()).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn conv_bias_only_fills_planes() {
    let x = Tensor::<f32>::zeros(&[1, 2, 3, 3]).unwrap();
    let w = Tensor::<f32>::zeros(&[4, 2, 1, 1]).unwrap();
    let b = t32(&[1.0, -2.0, 0.5, 0.0], &[4]);
    let y = conv2d(&x, &w, Some(&b), &Conv2dSpec::unit()).unwrap();
    for oc in 0..4 {
        for p in 0..9 {
            assert_eq!(y.data()[oc * 9 + p], b.data()[oc]);
        }
    }
}

#[test]
fn conv_rejects_bad_shapes() {
    let x = Tensor::<f32>::zeros(&[1, 3, 5, 5]).unwrap();
    let w = Tensor::<f32>::zeros(&[4, 2, 3, 3]).unwrap(); // wants Cin/groups == 2
    let err = conv2d(&x, &w, None, &Conv2dSpec::same3x3(1)).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { op: "conv2d", axis: 1, .. }));

    let w = Tensor::<f32>::zeros(&[4, 3, 3, 3]).unwrap();
    let err = conv2d(&x, &w, None, &Conv2dSpec::same3x3(1).with_groups(2)).unwrap_err();
    assert!(matches!(err, Error::NotDivisible { op: "conv2d", .. }));

    // dilation 4 on a 5x5 input: effective kernel 9 > padded 5 when unpadded
    let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]).unwrap();
    let spec = Conv2dSpec {
        stride: 1,
        dilation: 4,
        groups: 1,
        pad: PadSpec::none(),
    };
    let err = conv2d(&x, &w, None, &spec).unwrap_err();
    assert!(matches!(err, Error::InvalidArg { op: "conv2d", .. }));
}

#[test]
fn conv_stride2_halves_extents() {
    let x = Tensor::<f32>::full(1.0, &[1, 1, 8, 8]).unwrap();
    let w = Tensor::<f32>::full(1.0, &[1, 1, 3, 3]).unwrap();
    let y = conv2d(&x, &w, None, &Conv2dSpec::same3x3(1).with_stride(2)).unwrap();
    assert_eq!(y.dims(), &[1, 1, 4, 4]);
    // interior windows see all nine ones
    assert_eq!(y.data()[5], 9.0);
}

// pad2d

#[test]
fn pad_modes_map_borders_as_documented() {
    let x = t32(&[1., 2., 3., 4.], &[1, 1, 2, 2]);
    let spec = PadSpec::uniform(PadMode::Replicate, 1);
    let y = pad2d(&x, &spec).unwrap();
    assert_eq!(
        y.data(),
        &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
    );

    let x = t32(&[1., 2., 3., 4., 5., 6., 7., 8., 9.], &[1, 1, 3, 3]);
    let y = pad2d(&x, &PadSpec::uniform(PadMode::Reflect, 1)).unwrap();
    // mirror excludes the edge sample: row -1 is row 1
    assert_eq!(&y.data()[0..5], &[5., 4., 5., 6., 5.]);

    let y = pad2d(&x, &PadSpec::uniform(PadMode::Zero, 1)).unwrap();
    assert_eq!(&y.data()[0..5], &[0., 0., 0., 0., 0.]);
    assert_eq!(y.data()[6], 1.0);
}

#[test]
fn reflect_margin_larger_than_extent_rejected() {
    let x = Tensor::<f32>::zeros(&[1, 1, 3, 3]).unwrap();
    let err = pad2d(&x, &PadSpec::uniform(PadMode::Reflect, 3)).unwrap_err();
    assert!(matches!(err, Error::InvalidArg { op: "pad2d", .. }));
}

// pixel shuffle

#[test]
fn pixel_shuffle_matches_index_map() {
    // [1,4,2,2] -> [1,1,4,4]; input channel (dy*2+dx) lands at offset (dy,dx)
    let data: Vec<f32> = (0..16).map(|i| i as f32).collect();
    let x = t32(&data, &[1, 4, 2, 2]);
    let y = x.pixel_shuffle(2).unwrap();
    assert_eq!(y.dims(), &[1, 1, 4, 4]);
    let expect = [
        0., 4., 1., 5., //
        8., 12., 9., 13., //
        2., 6., 3., 7., //
        10., 14., 11., 15.,
    ];
    assert_eq!(y.data(), &expect);
}

#[test]
fn unshuffle_inverts_shuffle_bitwise() {
    let data: Vec<f32> = (0..2 * 8 * 3 * 5).map(|i| (i as f32).sin()).collect();
    let x = t32(&data, &[2, 8, 3, 5]);
    let y = x.pixel_shuffle(2).unwrap().pixel_unshuffle(2).unwrap();
    assert_eq!(y.data(), x.data());
    let z = x.pixel_unshuffle(1).unwrap();
    assert_eq!(z.data(), x.data());
}

#[test]
fn shuffle_rejects_indivisible() {
    let x = Tensor::<f32>::zeros(&[1, 6, 2, 2]).unwrap();
    assert!(matches!(
        x.pixel_shuffle(2).unwrap_err(),
        Error::NotDivisible { op: "pixel_shuffle", .. }
    ));
    let x = Tensor::<f32>::zeros(&[1, 1, 5, 4]).unwrap();
    assert!(matches!(
        x.pixel_unshuffle(2).unwrap_err(),
        Error::NotDivisible { op: "pixel_unshuffle", .. }
    ));
}

// bilinear

#[test]
fn bilinear_constant_stays_constant() {
    let x = Tensor::<f32>::full(0.73, &[1, 3, 5, 7]).unwrap();
    for ac in [false, true] {
        let y = x.interpolate_bilinear(13, 3, ac).unwrap();
        assert!(y.data().iter().all(|&v| close(v, 0.73, 1e-7)));
    }
}

#[test]
fn bilinear_align_corners_pins_corners() {
    let x = t32(&[1., 2., 3., 4.], &[1, 1, 2, 2]);
    let y = x.interpolate_bilinear(3, 3, true).unwrap();
    let d = y.data();
    assert_eq!([d[0], d[2], d[6], d[8]], [1., 2., 3., 4.]);
    assert!(close(d[4], 2.5, 1e-7)); // centre is the mean
}

#[test]
fn bilinear_half_pixel_downsample_averages_blocks() {
    // 4x4 -> 2x2 with half-pixel centres lands exactly between 2x2 blocks
    let data: Vec<f32> = (0..16).map(|i| i as f32).collect();
    let x = t32(&data, &[1, 1, 4, 4]);
    let y = x.interpolate_bilinear(2, 2, false).unwrap();
    let blocks = [
        (0. + 1. + 4. + 5.) / 4.,
        (2. + 3. + 6. + 7.) / 4.,
        (8. + 9. + 12. + 13.) / 4.,
        (10. + 11. + 14. + 15.) / 4.,
    ];
    for (a, b) in y.data().iter().zip(blocks) {
        assert!(close(*a, b, 1e-6));
    }
}

#[test]
fn bilinear_matches_closed_form_oracle() {
    let data: Vec<f32> = (0..3 * 7 * 5).map(|i| ((i * 37) % 11) as f32 * 0.1).collect();
    let x = t32(&data, &[1, 3, 7, 5]);
    let (oh, ow) = (21, 15);
    let y = x.interpolate_bilinear(oh, ow, false).unwrap();
    for c in 0..3 {
        for oy in 0..oh {
            for ox in 0..ow {
                let sy = ((oy as f64 + 0.5) * 7.0 / oh as f64 - 0.5).max(0.0);
                let sx = ((ox as f64 + 0.5) * 5.0 / ow as f64 - 0.5).max(0.0);
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y0, x0) = (y0.min(6), x0.min(4));
                let (y1, x1) = ((y0 + 1).min(6), (x0 + 1).min(4));
                let (fy, fx) = (
                    if y0 == 6 { 0.0 } else { sy - y0 as f64 },
                    if x0 == 4 { 0.0 } else { sx - x0 as f64 },
                );
                let g = |yy: usize, xx: usize| data[c * 35 + yy * 5 + xx] as f64;
                let v = (1.0 - fy) * ((1.0 - fx) * g(y0, x0) + fx * g(y0, x1))
                    + fy * ((1.0 - fx) * g(y1, x0) + fx * g(y1, x1));
                let got = y.data()[c * oh * ow + oy * ow + ox] as f64;
                assert!((got - v).abs() < 1e-6, "({c},{oy},{ox}): {got} vs {v}");
            }
        }
    }
}

// softmax

#[test]
fn softmax_uniform_and_extreme_logits() {
    let x = Tensor::<f32>::full(3.0, &[6]).unwrap();
    let y = x.softmax(0).unwrap();
    for &v in y.data() {
        assert!(close(v, 1.0 / 6.0, 1e-7));
    }

    let mut d = vec![0.0f32; 5];
    d[2] = 1000.0;
    let y = t32(&d, &[5]).softmax(0).unwrap();
    assert!(y.data().iter().all(|v| v.is_finite()));
    assert!(close(y.data()[2], 1.0, 1e-6));
    let s: f32 = y.data().iter().sum();
    assert!(close(s, 1.0, 1e-6));
}

#[test]
fn softmax_matches_f64_oracle() {
    let data: Vec<f32> = (0..24).map(|i| ((i * 13 % 7) as f32) - 3.0).collect();
    let x = t32(&data, &[4, 6]);
    let y = x.softmax(1).unwrap();
    for r in 0..4 {
        let row: Vec<f64> = data[r * 6..r * 6 + 6].iter().map(|&v| v as f64).collect();
        let mx = row.iter().cloned().fold(f64::MIN, f64::max);
        let sum: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        for i in 0..6 {
            let want = ((row[i] - mx).exp() / sum) as f32;
            assert!(close(y.data()[r * 6 + i], want, 1e-7));
        }
    }
}

// matmul

#[test]
fn matmul_identity_and_oracle() {
    let a = t32(&[1., 2., 3., 4.], &[2, 2]);
    let eye = t32(&[1., 0., 0., 1.], &[2, 2]);
    assert_eq!(a.matmul(&eye).unwrap().data(), a.data());

    let ad: Vec<f32> = (0..2 * 3 * 4).map(|i| (i as f32 * 0.37).sin()).collect();
    let bd: Vec<f32> = (0..2 * 4 * 5).map(|i| (i as f32 * 0.11).cos()).collect();
    let a = t32(&ad, &[2, 3, 4]);
    let b = t32(&bd, &[2, 4, 5]);
    let y = a.matmul(&b).unwrap();
    assert_eq!(y.dims(), &[2, 3, 5]);
    for bi in 0..2 {
        for i in 0..3 {
            for j in 0..5 {
                let mut acc = 0.0f64;
                for k in 0..4 {
                    acc += ad[bi * 12 + i * 4 + k] as f64 * bd[bi * 20 + k * 5 + j] as f64;
                }
                assert!(close(y.data()[bi * 15 + i * 5 + j], acc as f32, 1e-6));
            }
        }
    }
}

#[test]
fn matmul_broadcasts_leading_axes() {
    let a = t32(&[1., 0., 0., 2.], &[1, 2, 2]);
    let bd: Vec<f32> = (0..3 * 2 * 2).map(|i| i as f32).collect();
    let b = t32(&bd, &[3, 2, 2]);
    let y = a.matmul(&b).unwrap();
    assert_eq!(y.dims(), &[3, 2, 2]);
    // diag(1,2) * B doubles the second row of each batch
    for bi in 0..3 {
        assert_eq!(y.data()[bi * 4], bd[bi * 4]);
        assert_eq!(y.data()[bi * 4 + 3], 2.0 * bd[bi * 4 + 3]);
    }
}

#[test]
fn matmul_rejects_mismatched_inner() {
    let a = Tensor::<f32>::zeros(&[3, 4]).unwrap();
    let b = Tensor::<f32>::zeros(&[5, 2]).unwrap();
    assert!(matches!(
        a.matmul(&b).unwrap_err(),
        Error::ShapeMismatch { op: "matmul", .. }
    ));
}

// elementwise + reductions

#[test]
fn gelu_fixed_points() {
    let x = t32(&[0.0, 3.0, -3.0], &[3]);
    let y = x.gelu().unwrap();
    assert_eq!(y.data()[0], 0.0);
    assert!(close(y.data()[1], 2.9964, 1e-3));
    assert!(close(y.data()[2], -0.0036, 1e-3));
}

#[test]
fn sigmoid_of_zero_is_half() {
    let y = t32(&[0.0], &[1]).sigmoid().unwrap();
    assert_eq!(y.data()[0], 0.5);
}

#[test]
fn mean_and_sum_closed_forms() {
    let x = t32(&[1., 2., 3., 4.], &[2, 2]);
    assert_eq!(x.mean().unwrap().item().unwrap(), 2.5);
    assert_eq!(x.sum().unwrap().item().unwrap(), 10.0);
}

#[test]
fn concat_then_slices_recover_parts_bitwise() {
    let a = t32(&(0..12).map(|i| i as f32).collect::<Vec<_>>(), &[1, 3, 2, 2]);
    let b = t32(&(50..58).map(|i| i as f32).collect::<Vec<_>>(), &[1, 2, 2, 2]);
    let cat = concat(&[&a, &b], 1).unwrap();
    assert_eq!(cat.dims(), &[1, 5, 2, 2]);
    assert_eq!(cat.slice(1, 0, 3).unwrap().data(), a.data());
    assert_eq!(cat.slice(1, 3, 5).unwrap().data(), b.data());
}

#[test]
fn concat_rejects_mismatched_other_axes() {
    let a = Tensor::<f32>::zeros(&[1, 2, 4, 4]).unwrap();
    let b = Tensor::<f32>::zeros(&[1, 2, 5, 4]).unwrap();
    assert!(matches!(
        concat(&[&a, &b], 1).unwrap_err(),
        Error::ShapeMismatch { op: "concat", axis: 2, .. }
    ));
}

#[test]
fn crop_matches_manual_window() {
    let data: Vec<f32> = (0..16).map(|i| i as f32).collect();
    let x = t32(&data, &[1, 1, 4, 4]);
    let y = x.crop2d(1, 2, 2, 2).unwrap();
    assert_eq!(y.data(), &[6., 7., 10., 11.]);
}

#[test]
fn transpose_last2_swaps() {
    let x = t32(&[1., 2., 3., 4., 5., 6.], &[2, 3]);
    let y = x.transpose_last2().unwrap();
    assert_eq!(y.dims(), &[3, 2]);
    assert_eq!(y.data(), &[1., 4., 2., 5., 3., 6.]);
}

// layer norm

#[test]
fn layer_norm_constant_channels_give_offset() {
    // every channel vector is constant -> normalised value 0 -> output = offset
    let x = Tensor::<f32>::full(5.0, &[1, 4, 3, 3]).unwrap();
    let gain = Tensor::<f32>::full(2.0, &[4]).unwrap();
    let offset = t32(&[0.1, 0.2, 0.3, 0.4], &[4]);
    let y = layer_norm_channels(&x, &gain, &offset, 1e-6).unwrap();
    for c in 0..4 {
        for p in 0..9 {
            assert!(close(y.data()[c * 9 + p], offset.data()[c], 1e-6));
        }
    }
}

#[test]
fn layer_norm_standardises_each_position() {
    let data: Vec<f32> = (0..8 * 2 * 2).map(|i| ((i * 29 % 13) as f32) * 0.3 - 1.0).collect();
    let x = t32(&data, &[1, 8, 2, 2]);
    let gain = Tensor::<f32>::full(1.0, &[8]).unwrap();
    let offset = Tensor::<f32>::zeros(&[8]).unwrap();
    let y = layer_norm_channels(&x, &gain, &offset, 1e-9).unwrap();
    for p in 0..4 {
        let vals: Vec<f64> = (0..8).map(|c| y.data()[c * 4 + p] as f64).collect();
        let mean: f64 = vals.iter().sum::<f64>() / 8.0;
        let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn layer_norm_zero_variance_is_finite() {
    let x = Tensor::<f32>::full(1.0, &[1, 3, 2, 2]).unwrap();
    let gain = Tensor::<f32>::full(1.0, &[3]).unwrap();
    let offset = Tensor::<f32>::zeros(&[3]).unwrap();
    let y = layer_norm_channels(&x, &gain, &offset, 1e-6).unwrap();
    assert!(y.data().iter().all(|v| v.is_finite()));
}

// shape and construction contracts

#[test]
fn rank_and_extent_limits_enforced() {
    assert!(Tensor::<f32>::from_vec("t", vec![], &[]).is_err());
    assert!(Tensor::<f32>::from_vec("t", vec![0.0; 32], &[2, 2, 2, 2, 2]).is_err());
    assert!(Tensor::<f32>::zeros(&[3, 0, 2]).is_err());
    let err = Tensor::<f32>::from_vec("t", vec![0.0; 5], &[2, 3]).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { .. }));
}

#[test]
fn reshape_checks_element_count() {
    let x = Tensor::<f32>::zeros(&[2, 6]).unwrap();
    assert!(x.reshape(&[3, 4]).is_ok());
    assert!(x.reshape(&[5, 2]).is_err());
}
