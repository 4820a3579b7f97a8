use gsmefb_core::baseline_omp::{
    allocate_bits, nmse, omp_estimate, on_grid_channel, quantize_csi, svd_gsm_beamformer, ClipPolicy, CsiQuantizer,
    Dictionary,
};
use gsmefb_core::beamforming::HybridBeamformer;
use gsmefb_core::channel::{sample_channel, ChannelConfig, ChannelMatrix};
use gsmefb_core::cmat::CMatrix;
use gsmefb_core::gsm_topology::{ConnectorSet, GsmConfig};
use gsmefb_core::pilots::{observe, PilotLayer};
use gsmefb_core::rate::{mi_amp_phase, LinkParams};
use gsmefb_core::rng::rng_from;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn pilots(seed: u64) -> CMatrix<f64> {
    let cs = ConnectorSet::build(&GsmConfig::default(), 0).unwrap();
    PilotLayer::<f64>::new(&cs, 8, 1.0, &mut rng_from(seed, &[])).unwrap().emit()
}

#[test]
fn on_grid_one_sparse_exact_recovery() {
    let cfg = ChannelConfig::default();
    let dict = Dictionary::<f64>::new(&cfg, 64, 64).unwrap();
    for trial in 0..100u64 {
        let mut rng = rng_from(trial, &[1]);
        let x = pilots(trial);
        let h = on_grid_channel(&dict, 1, &mut rng);
        let y = observe(&h, &x, 0.0, &mut rng).unwrap();
        let est = omp_estimate(&y, &x, &dict, 1, 0.0).unwrap();
        let e = nmse(&est.h, &h).unwrap();
        assert!(e < 1e-6, "trial {trial}: nmse {e}");
    }
}

#[test]
fn sparsity_zero_rejected() {
    let cfg = ChannelConfig::default();
    let dict = Dictionary::<f64>::new(&cfg, 8, 8).unwrap();
    let x = pilots(0);
    let y = CMatrix::zeros(4, 8);
    assert!(omp_estimate(&y, &x, &dict, 0, 0.0).is_err());
    assert!(omp_estimate(&CMatrix::zeros(3, 8), &x, &dict, 1, 0.0).is_err());
}

#[test]
fn dictionary_atoms_are_unit_norm() {
    let dict = Dictionary::<f64>::new(&ChannelConfig::default(), 64, 64).unwrap();
    assert_eq!(dict.len(), 4096);
    let atoms = dict.atoms();
    assert_eq!(atoms.shape(), (64, 4096));
    for k in (0..4096).step_by(37) {
        let n: f64 = (0..64).map(|r| atoms[(r, k)].norm_sqr()).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }
}

#[test]
fn residual_is_non_increasing() {
    let cfg = ChannelConfig::default();
    let dict = Dictionary::<f64>::new(&cfg, 64, 64).unwrap();
    let link = LinkParams::from_snr_db(10.0);
    for trial in 0..20u64 {
        let mut rng = rng_from(trial, &[2]);
        let h = sample_channel(&cfg, &mut rng).unwrap();
        let x = pilots(trial);
        let y = observe(&h, &x, link.noise_var, &mut rng).unwrap();
        let est = omp_estimate(&y, &x, &dict, 16, 0.0).unwrap();
        for w in est.residual_norms.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }
}

#[test]
fn nmse_improves_with_snr() {
    let cfg = ChannelConfig::default();
    let dict = Dictionary::<f64>::new(&cfg, 64, 64).unwrap();
    let mut medians = Vec::new();
    for snr in [0.0, 10.0, 20.0] {
        let link = LinkParams::from_snr_db(snr);
        let errs: Vec<f64> = (0..60u64)
            .map(|trial| {
                let mut rng = rng_from(trial, &[3]);
                let h = sample_channel(&cfg, &mut rng).unwrap();
                let x = pilots(trial);
                let y = observe(&h, &x, link.noise_var, &mut rng).unwrap();
                let est = omp_estimate(&y, &x, &dict, 16, link.noise_var).unwrap();
                nmse(&est.h, &h).unwrap()
            })
            .collect();
        medians.push(median(errs));
    }
    eprintln!("median nmse at 0/10/20 dB: {:?}", medians);
    assert!(medians[0] > medians[1] && medians[1] > medians[2]);
}

#[test]
fn bit_allocation_is_even() {
    assert_eq!(allocate_bits(5, 3), vec![2, 2, 1]);
    assert_eq!(allocate_bits(36, 128).iter().sum::<u32>(), 36);
    assert!(allocate_bits(36, 128).iter().all(|&b| b <= 1));
    assert_eq!(allocate_bits(0, 4), vec![0; 4]);
}

#[test]
fn quantizer_contracts() {
    let cfg = ChannelConfig::default();
    let h: ChannelMatrix<f64> = sample_channel(&cfg, &mut rng_from(4, &[])).unwrap();
    let zero = quantize_csi(&h, 0, ClipPolicy::default()).unwrap();
    assert_eq!(zero.h.frobenius(), 0.0);

    let fine = quantize_csi(&h, 16 * 128, ClipPolicy::MaxAbs).unwrap();
    assert!(fine.h.sub(&h.h).unwrap().frobenius() / h.h.frobenius() < 1e-3);

    for clip in [ClipPolicy::default(), ClipPolicy::MaxAbs] {
        let q = CsiQuantizer::fit(&h, 36, clip);
        let once = q.apply(&h).unwrap();
        let twice = q.apply(&once).unwrap();
        assert_eq!(once, twice);
    }
}

#[test]
fn svd_beamformer_is_normalized_and_beats_random() {
    let cfg = ChannelConfig::default();
    let cs = ConnectorSet::build(&GsmConfig::default(), 0).unwrap();
    let link = LinkParams::from_snr_db(10.0);
    let mut better = 0;
    for trial in 0..20u64 {
        let mut rng = rng_from(trial, &[5]);
        let h: ChannelMatrix<f64> = sample_channel(&cfg, &mut rng).unwrap();
        let hb = svd_gsm_beamformer(&h, &cs, 4, 2).unwrap();
        let a = hb.analog.matrix().unwrap();
        for (c, d) in cs.iter().zip(&hb.digital.d) {
            let f = gsmefb_core::beamforming::precoder(&a, c, d).unwrap();
            assert!((f.frobenius_sqr() - 2.0).abs() < 1e-9);
        }
        let rnd = HybridBeamformer::random(16, 4, 2, cs.clone(), &mut rng).unwrap();
        if mi_amp_phase(&hb, &h, &link).unwrap() > mi_amp_phase(&rnd, &h, &link).unwrap() {
            better += 1;
        }
    }
    assert!(better >= 18, "{better}");
}

#[test]
fn median_nmse_regression_at_20db() {
    let cfg = ChannelConfig::default();
    let dict = Dictionary::<f64>::new(&cfg, 64, 64).unwrap();
    let link = LinkParams::from_snr_db(20.0);
    let errs: Vec<f64> = (0..100u64)
        .map(|trial| {
            let mut rng = rng_from(trial, &[3]);
            let h = sample_channel(&cfg, &mut rng).unwrap();
            let y = observe(&h, &pilots(trial), link.noise_var, &mut rng).unwrap();
            let est = omp_estimate(&y, &pilots(trial), &dict, 16, link.noise_var).unwrap();
            nmse(&est.h, &h).unwrap()
        })
        .collect();
    let m = median(errs);
    // 8 pilot columns observe at most 8 of the 16 transmit dimensions
    assert!((m - 0.1521).abs() < 1e-3, "{m}");
}
