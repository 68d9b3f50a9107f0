//! Two-step, one-layer generation compared against a hand-unrolled loop that
//! shares no code with the library's forward pass, schedule or attention.

use image::{Rgb, RgbImage};
use ndarray::Array2;
use style3d::attn::{AttnConfig, Beta, STYLE_INJECTION_LAYERS};
use style3d::diffusion::*;

type Mat = Vec<Vec<f64>>;

fn to_mat(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i][p] * b[p][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn layer_norm(a: &Mat) -> Mat {
    a.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d;
            row.iter().map(|x| (x - mean) / (var + 1e-5).sqrt()).collect()
        })
        .collect()
}

fn softmax_attention(q: &Mat, k: &Mat, v: &Mat, scale: f64) -> Mat {
    q.iter()
        .map(|qi| {
            let logits: Vec<f64> = k
                .iter()
                .map(|kj| scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let m = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            (0..v[0].len())
                .map(|c| e.iter().zip(v).map(|(w, vj)| w / z * vj[c]).sum())
                .collect()
        })
        .collect()
}

fn sinusoid(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let f = (-(10000f64).ln() * i as f64 / half as f64).exp();
        out[i] = (t * f).sin();
        out[half + i] = (t * f).cos();
    }
    out
}

fn alphas_cumprod() -> Vec<f64> {
    let (a, b) = (0.00085f64.sqrt(), 0.012f64.sqrt());
    let mut acc = 1.0;
    (0..1000)
        .map(|i| {
            let beta = (a + (b - a) * i as f64 / 999.0).powi(2);
            acc *= 1.0 - beta;
            acc
        })
        .collect()
}

fn image(seed: u32) -> RgbImage {
    RgbImage::from_fn(32, 32, |x, y| {
        Rgb([
            ((x * 8 + seed * 40) % 256) as u8,
            ((y * 8 + seed * 90) % 256) as u8,
            ((x + y) * 4 % 256) as u8,
        ])
    })
}

#[test]
fn two_step_one_layer_generation_matches_unrolled_loop() {
    let layer = STYLE_INJECTION_LAYERS[1].to_string();
    let mut backend = BackendHandle::toy(&ToyBackendConfig::default()).unwrap();
    backend.unet = MiniUNet::random(std::slice::from_ref(&layer), 4, 16, 3, false);
    let cfg = AttnConfig::builder()
        .target_layers([layer.as_str()])
        .beta(Beta::new(0.4, 0.6).unwrap())
        .lambda(1.5)
        .build()
        .unwrap();
    let (content, style) = (image(1), image(2));
    let bank = build_bank(&content, &style, &backend, &cfg, 2, false).unwrap();
    let gen = generate_traced(&content, &bank, &backend, &cfg, 2, 42, Default::default()).unwrap();

    // Unrolled oracle.
    let u = &backend.unet;
    let l = &u.layers[0];
    let ac = alphas_cumprod();
    let cond = to_mat(&backend.codec.encode(&content).unwrap().data);
    let mut x = to_mat(&initial_noise(&backend, 42).unwrap().data);
    let pooled: Vec<f64> = (0..4)
        .map(|c| cond.iter().map(|r| r[c]).sum::<f64>() / cond.len() as f64)
        .collect();
    let pooled = matmul(&vec![pooled], &to_mat(&u.w_pool))[0].clone();
    for (t, a_next) in [(501usize, ac[1]), (1, 1.0)] {
        let temb = matmul(&vec![sinusoid(t as f64, 16)], &to_mat(&u.w_time))[0].clone();
        let mut h = matmul(&x, &to_mat(&u.w_in));
        for row in &mut h {
            for (j, v) in row.iter_mut().enumerate() {
                *v += temb[j] + pooled[j];
            }
        }
        let n = layer_norm(&h);
        let q = matmul(&n, &to_mat(&l.to_q));
        let kv = bank.key_value(&layer, t).expect("bank entry");
        let qp = to_mat(bank.preserve_query(&layer, t).expect("preserve").data());
        let blended: Mat = q
            .iter()
            .zip(&qp)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| 0.4 * x + 0.6 * y).collect())
            .collect();
        let a = softmax_attention(
            &blended,
            &to_mat(kv.key.data()),
            &to_mat(kv.value.data()),
            1.5 / 4.0,
        );
        let delta = matmul(&a, &to_mat(&l.to_out));
        for (hr, dr) in h.iter_mut().zip(&delta) {
            for (hv, dv) in hr.iter_mut().zip(dr) {
                *hv += dv;
            }
        }
        let eps = matmul(&layer_norm(&h), &to_mat(&u.w_out));
        let a_t = ac[t];
        for (xr, er) in x.iter_mut().zip(&eps) {
            for (xv, ev) in xr.iter_mut().zip(er) {
                let x0 = (*xv - (1.0 - a_t).sqrt() * ev) / a_t.sqrt();
                *xv = a_next.sqrt() * x0 + (1.0 - a_next).sqrt() * ev;
            }
        }
    }
    assert_eq!(gen.trajectory.timesteps, vec![501, 1, 0]);
    let got = to_mat(&gen.trajectory.last().data);
    for (gr, xr) in got.iter().zip(&x) {
        for (g, o) in gr.iter().zip(xr) {
            assert!((g - o).abs() <= 1e-10 * (1.0 + o.abs()), "{g} vs {o}");
        }
    }
}
