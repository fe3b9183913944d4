mod common;

use common::{fd_error, low_rank_toy, random_levels, setup, small_meg, toy_objective};
use elastorec::deeprec::decoder::random_latents;
use elastorec::deeprec::{
    grad_check, loss_dc, loss_latent, loss_magnitude, loss_wave_tv, Decoder, DecoderConfig, LevelData, Pairs, Weights,
};
use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn dc_gradient_matches_finite_differences() {
    let s = setup(2);
    let data = LevelData::new(&s.plan, &s.kspace, 1.0);
    let x = random_levels(&s.plan, 6, 1);
    let (_, g) = loss_dc(&s.plan, &data, &x);
    let err = fd_error(&x, &g, |y| loss_dc(&s.plan, &data, y).0, 1e-4, 30);
    assert!(err < 1e-7, "dc gradient error {err:e}");
}

#[test]
fn dc_loss_of_zero_images_is_normalised_data_energy() {
    let s = setup(1);
    let data = LevelData::new(&s.plan, &s.kspace, 1.0);
    let zeros = vec![Array3::zeros((6, 8, 8))];
    let (l, _) = loss_dc(&s.plan, &data, &zeros);
    let energy: f64 = s.kspace.data.iter().map(|z| z.norm_sqr()).sum();
    let count = s.kspace.total_samples() as f64;
    assert!((l - energy / count).abs() < 1e-12 * l, "{l} vs {}", energy / count);
}

#[test]
fn regulariser_gradients_match_finite_differences() {
    let s = setup(2);
    let x = random_levels(&s.plan, 6, 2);
    let none = None::<&mut ChaCha8Rng>;
    let (_, g) = loss_magnitude(&x, Pairs::All, none);
    let err = fd_error(&x, &g, |y| loss_magnitude(y, Pairs::All, None::<&mut ChaCha8Rng>).0, 1e-6, 30);
    assert!(err < 1e-4, "magnitude gradient error {err:e}");

    let pairs = small_meg().pairs();
    let finest = vec![x[1].clone()];
    for iso in [false, true] {
        let (_, g) = loss_wave_tv(&finest[0], &pairs, iso).unwrap();
        let err = fd_error(&finest, &[g], |y| loss_wave_tv(&y[0], &pairs, iso).unwrap().0, 1e-6, 30);
        assert!(err < 1e-4, "wave TV (isotropic {iso}) gradient error {err:e}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v = random_latents(6, 3, &mut rng);
    let (_, g) = loss_latent(&v);
    let v3 = vec![v.clone().insert_axis(ndarray::Axis(0))];
    let g3 = vec![g.insert_axis(ndarray::Axis(0))];
    let err = fd_error(&v3, &g3, |y| loss_latent(&y[0].index_axis(ndarray::Axis(0), 0).to_owned()).0, 1e-4, 10);
    assert!(err < 1e-7, "latent gradient error {err:e}");
}

#[test]
fn end_to_end_gradient_of_quadratic_terms() {
    let (obj, p) = toy_objective(Weights { magn: 0.0, wave: 0.0, latent: 0.3 });
    let report = grad_check(&obj, &p, 40, 1, 1e-4).unwrap();
    assert!(report.max_rel_err < 1e-7, "{report:?}");
}

#[test]
fn end_to_end_gradient_of_full_loss() {
    let (obj, p) = toy_objective(Weights { magn: 0.05, wave: 0.02, latent: 0.3 });
    let a = grad_check(&obj, &p, 40, 2, 1e-4).unwrap();
    assert!(a.max_rel_err < 1e-4, "{a:?}");
    let b = grad_check(&obj, &p, 40, 2, 1e-4).unwrap();
    assert_eq!(a.probes, b.probes);
}

#[test]
fn linear_decoder_subsumes_the_subspace_model() {
    let err = common::subsumption_nrmse();
    assert!(err < 1e-2, "nrmse {err}");
}

#[test]
fn zero_iterations_returns_the_initial_decode() {
    let toy = low_rank_toy(8, 2, 4);
    let dcfg = DecoderConfig {
        levels: 2,
        latent: 2,
        mlp_hidden: vec![8],
        base_channels: 4,
        min_channels: 2,
        ..DecoderConfig::default()
    };
    let tcfg = elastorec::deeprec::TrainConfig { iterations: 0, ..Default::default() };
    let out = elastorec::deeprec::train(&toy.kspace, &toy.coils, &toy.traj, &toy.meg, &dcfg, &tcfg)
        .map_err(elastorec::Error::from)
        .unwrap();
    let decoded = Decoder::new(dcfg, 8).unwrap().decode(&out.params).mapv(|z| z * out.scale);
    assert_eq!(decoded, out.series.frames);
    assert_eq!(out.trace.rows.len(), 1);
}
