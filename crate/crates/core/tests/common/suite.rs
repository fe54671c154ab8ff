//! Finite-difference checks grouped by layer kind and loss. Each group
//! returns named reports so callers can assert or summarise them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wlssgan::losses::{
    adversarial_generator_loss, feature_matching, joint_feature_matching, supervised_loss, unsupervised_loss,
    weighted_generator_loss, AdversarialForm, LayerSet, LossConfig,
};
use wlssgan::models::FeatureTap;
use wlssgan::nn::{Activation, BatchNormStats, ConvGeometry, GradCheckConfig, GradCheckReport, Mode, NormMode};

use super::{away_from_zero, check, full_discriminator_check, full_generator_check, normal, project, rng};

pub type Checks = Vec<(String, GradCheckReport)>;

pub fn conv() -> Checks {
    [(4, 2, 1, 9), (3, 1, 0, 7), (1, 2, 0, 6), (4, 2, 1, 8)]
        .into_iter()
        .map(|(k, s, p, len)| {
            let mut r = rng(k as u64 * 10 + s as u64);
            let params = vec![
                normal(&[2, 3, len], 1.0, &mut r),
                normal(&[4, 3, k], 0.5, &mut r),
                normal(&[4], 0.5, &mut r),
            ];
            let g = ConvGeometry::new(k, s, p).unwrap();
            let rep = check(params, |t, v| {
                let y = t.conv1d(v[0], v[1], v[2], g)?;
                project(t, y, 1)
            });
            (format!("conv1d k{k} s{s} p{p}"), rep)
        })
        .collect()
}

pub fn deconv() -> Checks {
    [(4, 2, 1, 5), (4, 1, 0, 1), (3, 2, 0, 4)]
        .into_iter()
        .map(|(k, s, p, len)| {
            let mut r = rng(k as u64 * 10 + s as u64 + 100);
            let params = vec![
                normal(&[2, 3, len], 1.0, &mut r),
                normal(&[3, 4, k], 0.5, &mut r),
                normal(&[4], 0.5, &mut r),
            ];
            let g = ConvGeometry::new(k, s, p).unwrap();
            let rep = check(params, |t, v| {
                let y = t.deconv1d(v[0], v[1], v[2], g)?;
                project(t, y, 2)
            });
            (format!("deconv1d k{k} s{s} p{p}"), rep)
        })
        .collect()
}

pub fn batch_norm() -> Checks {
    let mut r = rng(3);
    let params = vec![
        normal(&[3, 4, 5], 2.0, &mut r),
        normal(&[4], 1.0, &mut r),
        normal(&[4], 1.0, &mut r),
    ];
    let mut stats = BatchNormStats::<f64>::new(4);
    let batch = check(params.clone(), |t, v| {
        let y = t.batch_norm(v[0], v[1], v[2], &mut stats, NormMode::Batch { update_running: false })?;
        project(t, y, 3)
    });

    let mut stats = BatchNormStats::<f64>::new(4);
    stats.running_mean = vec![0.1, -0.2, 0.3, 0.0];
    stats.running_var = vec![1.5, 0.5, 2.0, 1.0];
    let running = check(params, |t, v| {
        let y = t.batch_norm(v[0], v[1], v[2], &mut stats, NormMode::Running)?;
        project(t, y, 4)
    });
    vec![
        ("batch norm (batch statistics)".into(), batch),
        ("batch norm (running statistics)".into(), running),
    ]
}

pub fn activations() -> Checks {
    [
        Activation::Relu,
        Activation::LeakyRelu(0.2),
        Activation::Tanh,
        Activation::Sigmoid,
    ]
    .into_iter()
    .enumerate()
    .map(|(i, act)| {
        let x = away_from_zero(&[2, 3, 6], &mut rng(5 + i as u64));
        let rep = check(vec![x], |t, v| {
            let y = t.activation(v[0], act)?;
            project(t, y, 5)
        });
        (format!("{act:?}"), rep)
    })
    .collect()
}

pub fn dropout() -> Checks {
    let x = normal(&[4, 2, 8], 1.0, &mut rng(6));
    let rep = check(vec![x], |t, v| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(99);
        let y = t.dropout(v[0], 0.5, Mode::Train, &mut mask_rng)?;
        project(t, y, 6)
    });
    vec![("dropout".into(), rep)]
}

pub fn linear_and_reshape() -> Checks {
    let mut r = rng(7);
    let params = vec![
        normal(&[3, 2, 4], 1.0, &mut r),
        normal(&[5, 8], 0.5, &mut r),
        normal(&[5], 0.5, &mut r),
    ];
    let rep = check(params, |t, v| {
        let f = t.flatten(v[0])?;
        let y = t.linear(f, v[1], v[2])?;
        let y = t.reshape(y, &[15])?;
        let s = t.sum(y)?;
        let p = project(t, y, 7)?;
        t.weighted_sum(&[(s, 0.3), (p, -1.2)])
    });
    vec![("flatten + linear + reshape + sums".into(), rep)]
}

pub fn classification_losses() -> Checks {
    let mut r = rng(8);
    let params = vec![normal(&[5, 4], 2.0, &mut r), normal(&[3, 4], 2.0, &mut r)];
    let labels = [0, 2, 1, 1, 0];
    let mut out: Checks = vec![
        (
            "supervised loss".into(),
            check(params.clone(), |t, v| supervised_loss(t, v[0], &labels)),
        ),
        (
            "unsupervised loss".into(),
            check(params.clone(), |t, v| unsupervised_loss(t, v[0], v[1])),
        ),
    ];
    for form in [AdversarialForm::NonSaturating, AdversarialForm::Saturating] {
        let rep = check(vec![params[1].clone()], |t, v| adversarial_generator_loss(t, v[0], form));
        out.push((format!("adversarial loss ({form})"), rep));
    }
    out
}

pub fn feature_matching_losses() -> Checks {
    let mut r = rng(9);
    let params = vec![
        normal(&[3, 2, 5], 1.0, &mut r),
        normal(&[4, 2, 5], 1.0, &mut r),
        normal(&[3, 3, 2], 1.0, &mut r),
        normal(&[4, 3, 2], 1.0, &mut r),
        normal(&[2], 1.0, &mut r),
    ];
    let single = check(params.clone(), |t, v| feature_matching(t, v[0], v[1], 1.0));

    let cfg = LossConfig::new(0.7, 0.3, LayerSet::new(&[1, 2]).unwrap()).unwrap();
    let joint = check(params, |t, v| {
        let tap = |layer, var, c, l| FeatureTap {
            layer,
            channels: c,
            length: l,
            var,
        };
        let g = [tap(1, v[0], 2, 5), tap(2, v[2], 3, 2)];
        let u = [tap(1, v[1], 2, 5), tap(2, v[3], 3, 2)];
        let fm = joint_feature_matching(t, &g, &u, &cfg.l_mul)?.total;
        let adv = t.dot(v[4], v[4])?;
        weighted_generator_loss(t, adv, Some(fm), &cfg)
    });
    vec![
        ("feature matching".into(), single),
        ("joint feature matching + weighted loss".into(), joint),
    ]
}

/// Discriminator and generator objectives through the full networks at
/// batch size 2.
pub fn full_models() -> Checks {
    let cfg = GradCheckConfig {
        min_per_tensor: 4,
        ..Default::default()
    };
    vec![
        ("discriminator loss through D".into(), full_discriminator_check(&cfg)),
        (
            "generator loss through D and G".into(),
            full_generator_check(&LossConfig::default(), &cfg),
        ),
    ]
}

pub fn all() -> Checks {
    [
        conv,
        deconv,
        batch_norm,
        activations,
        dropout,
        linear_and_reshape,
        classification_losses,
        feature_matching_losses,
        full_models,
    ]
    .into_iter()
    .flat_map(|f| f())
    .collect()
}
