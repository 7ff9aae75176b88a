use flowalign_core::mixture::make_paired_mixture;
use flowalign_core::net::{
    cfm_loss, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, train,
    Architecture, TrainConfig, VelocityNet,
};
use flowalign_core::{Error, Label, RandomStream, StateVec, VelocityField};

fn tiny(n_classes: usize) -> Architecture {
    // 2 -> 8 -> 2 body
    Architecture {
        dim: 2,
        hidden: 8,
        layers: 1,
        freqs: 2,
        embed: 3,
        n_classes,
    }
}

#[test]
fn cfm_gradient_matches_finite_differences() {
    let h = 1e-5;
    for seed in 0..10 {
        let mut s = RandomStream::new(1000 + seed);
        let mut net = VelocityNet::init(tiny(2), &mut s).unwrap();
        // random head so every parameter carries gradient
        for p in net.params_mut() {
            *p += 0.5 * s.normal();
        }
        let x0 = s.normal_vec(2);
        let eps = s.normal_vec(2);
        let t = s.uniform();
        let label = [Label::Class(0), Label::Class(1), Label::Null][s.index(3)];
        let (_, grad) = cfm_loss(&net, &x0, &eps, t, label).unwrap();
        for k in 0..net.params().len() {
            let orig = net.params()[k];
            net.params_mut()[k] = orig + h;
            let lp = cfm_loss(&net, &x0, &eps, t, label).unwrap().0;
            net.params_mut()[k] = orig - h;
            let lm = cfm_loss(&net, &x0, &eps, t, label).unwrap().0;
            net.params_mut()[k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-6);
            assert!(rel <= 1e-4, "seed {seed} param {k}: fd {fd} analytic {}", grad[k]);
        }
    }
}

fn small_config(steps: usize) -> TrainConfig {
    TrainConfig {
        batch: 64,
        steps,
        seed: 3,
        ..Default::default()
    }
}

fn small_arch() -> Architecture {
    Architecture {
        hidden: 32,
        layers: 2,
        ..Architecture::default_for(4, 2)
    }
}

#[test]
fn zero_steps_returns_initialization() {
    let mix = make_paired_mixture(2, 4, 1, 0).unwrap();
    let a = train(&mix, small_arch(), &small_config(0)).unwrap();
    let b = train(&mix, small_arch(), &small_config(0)).unwrap();
    assert!(a.losses.is_empty());
    assert_eq!(a.net, b.net);
    assert!(a.net.params()[a.net.params().len() - 4..].iter().all(|&p| p == 0.0));
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let mix = make_paired_mixture(2, 4, 1, 0).unwrap();
    let a = train(&mix, small_arch(), &small_config(600)).unwrap();
    let b = train(&mix, small_arch(), &small_config(600)).unwrap();
    assert_eq!(a.net.params(), b.net.params());
    assert_eq!(a.losses, b.losses);
    let start = a.losses[..100].iter().sum::<f64>() / 100.0;
    let end = a.losses[500..].iter().sum::<f64>() / 100.0;
    assert!(end < start, "smoothed loss {start} -> {end}");
    assert!(a.net.params().iter().all(|p| p.is_finite()));
}

#[test]
fn divergence_is_reported() {
    let mix = make_paired_mixture(2, 4, 1, 0).unwrap();
    let cfg = TrainConfig {
        lr: 1e300,
        ..small_config(50)
    };
    assert!(matches!(train(&mix, small_arch(), &cfg), Err(Error::Diverged { .. })));
}

#[test]
fn bad_config_rejected() {
    let mix = make_paired_mixture(2, 4, 1, 0).unwrap();
    for cfg in [
        TrainConfig { batch: 0, ..small_config(1) },
        TrainConfig { p_drop: 1.0, ..small_config(1) },
        TrainConfig { lr: 0.0, ..small_config(1) },
    ] {
        assert!(matches!(train(&mix, small_arch(), &cfg), Err(Error::InvalidArgument(_))));
    }
}

#[test]
fn checkpoint_round_trip() {
    let mix = make_paired_mixture(2, 4, 1, 0).unwrap();
    let net = train(&mix, small_arch(), &small_config(20)).unwrap().net;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.falb");
    save_checkpoint(&net, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(encode_checkpoint(&back), std::fs::read(&path).unwrap());
    let mut s = RandomStream::new(0);
    for _ in 0..100 {
        let x = s.normal_vec(4);
        let t = s.uniform();
        let lab = [Label::Class(0), Label::Class(1), Label::Null][s.index(3)];
        assert_eq!(net.velocity(&x, t, lab).unwrap(), back.velocity(&x, t, lab).unwrap());
    }
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))));
    assert!(matches!(
        load_checkpoint(dir.path().join("missing")),
        Err(Error::Io(_))
    ));
    assert!(decode_checkpoint(b"nonsense").is_err());
}

#[test]
fn velocity_output_has_dim_d() {
    let mut s = RandomStream::new(2);
    let net = VelocityNet::init(Architecture::default_for(5, 3), &mut s).unwrap();
    let v = net.velocity(&StateVec::zeros(5), 0.3, Label::Class(2)).unwrap();
    assert_eq!(v.dim(), 5);
    assert!(matches!(
        net.velocity(&StateVec::zeros(5), 0.3, Label::Class(3)),
        Err(Error::UnknownLabel(_))
    ));
}
