mod common;

use common::*;
use gasca::model::{
    discriminate, encode, reconstruct, stack_discriminator, stack_generator, Architecture, BlockId,
    DiscriminatorStack, GeneratorStack, Sequential, StageFactory,
};
use gasca::{SeededRng, Tensor};
use proptest::prelude::*;

fn two_stage(rng: &mut SeededRng) -> (GeneratorStack, DiscriminatorStack) {
    let arch = Architecture::default();
    (
        arch.generator_stack(&[1, 16, 16], 2, rng).unwrap(),
        arch.discriminator_stack(&[1, 16, 16], 2, rng).unwrap(),
    )
}

#[test]
fn identity_stage_encode_and_reconstruct() {
    let g = stack_generator(GeneratorStack::new(), identity_stage(1, &[1, 16, 16])).unwrap();
    let x = Tensor::from_fn(&[2, 1, 16, 16], |i| (i % 7) as f64 / 7.0);
    assert_eq!(encode(&g, &x).unwrap(), x);
    assert_eq!(reconstruct(&g, &x).unwrap(), x);
}

#[test]
fn two_stride_two_stages_give_quarter_extent() {
    let mut rng = SeededRng::new(40);
    let (g, _) = two_stage(&mut rng);
    let z = encode(&g, &Tensor::zeros(&[1, 1, 16, 16])).unwrap();
    assert_eq!(&z.shape()[2..], &[4, 4]);
    assert_eq!(
        reconstruct(&g, &Tensor::zeros(&[1, 1, 16, 16]))
            .unwrap()
            .shape(),
        &[1, 1, 16, 16]
    );
}

#[test]
fn composition_matches_per_stage_application() {
    let mut rng = SeededRng::new(41);
    let (g, d) = two_stage(&mut rng);
    let x = Tensor::from_fn(&[3, 1, 16, 16], |_| rng.uniform());

    let mut z = x.clone();
    for s in g.stages() {
        z = s.encode(&z).unwrap();
    }
    assert_eq!(encode(&g, &x).unwrap(), z);
    let mut y = z;
    for s in g.stages().iter().rev() {
        y = s.decoder().forward(&y).unwrap();
    }
    assert_eq!(reconstruct(&g, &x).unwrap(), y);

    let mut h = x.clone();
    for (_, block) in d.feature_blocks() {
        h = block.forward(&h).unwrap();
    }
    let manual = d.head().unwrap().forward(&h).unwrap();
    assert_eq!(discriminate(&d, &x).unwrap(), manual);
}

#[test]
fn call_traces_for_depth_two() {
    let mut rng = SeededRng::new(42);
    let (g, d) = two_stage(&mut rng);
    let x = Tensor::zeros(&[1, 1, 16, 16]);
    let (_, gt) = g.forward_traced(&x).unwrap();
    assert_eq!(
        gt,
        vec![
            BlockId::Encoder(1),
            BlockId::Encoder(2),
            BlockId::Decoder(2),
            BlockId::Decoder(1)
        ]
    );
    let (_, dt) = d.forward_traced(&x).unwrap();
    assert_eq!(
        dt,
        vec![BlockId::Features(1), BlockId::Features(2), BlockId::Head(2)]
    );
    assert_eq!(d.depth(), 2);
    assert_eq!(d.head_stage(), Some(2));
}

#[test]
fn base_case_stacking_equals_single_stage() {
    let mut rng = SeededRng::new(43);
    let arch = Architecture::default();
    let g1 = arch.autoencoder(1, &[1, 16, 16], &mut rng).unwrap();
    let d1 = arch.discriminator(1, &[1, 16, 16], &mut rng).unwrap();
    let x = Tensor::from_fn(&[2, 1, 16, 16], |_| rng.uniform());
    let g = stack_generator(GeneratorStack::new(), g1.clone()).unwrap();
    let d = stack_discriminator(DiscriminatorStack::new(), d1.clone()).unwrap();
    assert_eq!(g.depth(), 1);
    assert_eq!(reconstruct(&g, &x).unwrap(), g1.forward(&x).unwrap());
    assert_eq!(discriminate(&d, &x).unwrap(), d1.forward(&x).unwrap());
}

#[test]
fn stacking_is_non_destructive() {
    let mut rng = SeededRng::new(44);
    let arch = Architecture::default();
    let g = arch.generator_stack(&[1, 16, 16], 1, &mut rng).unwrap();
    let d = arch.discriminator_stack(&[1, 16, 16], 1, &mut rng).unwrap();
    let g_before = param_bytes(g.params());
    let d_feat_before = param_bytes(d.feature_blocks().flat_map(|(_, b)| b.params()));

    let g2 = arch
        .autoencoder(2, g.code_shape().unwrap(), &mut rng)
        .unwrap();
    let d2 = arch
        .discriminator(2, d.feature_output_shape().unwrap(), &mut rng)
        .unwrap();
    let g = stack_generator(g, g2).unwrap();
    let d = stack_discriminator(d, d2).unwrap();
    assert_eq!(param_bytes(g.stages()[0].params()), g_before);
    let first: Vec<_> = d
        .feature_blocks()
        .take(1)
        .flat_map(|(_, b)| b.params())
        .collect();
    assert_eq!(param_bytes(first), d_feat_before);
}

#[test]
fn incompatible_stacking_rejected() {
    let mut rng = SeededRng::new(45);
    let arch = Architecture::default();
    let g = arch.generator_stack(&[1, 16, 16], 1, &mut rng).unwrap();
    let before = g.clone();
    let wrong = arch.autoencoder(2, &[1, 16, 16], &mut rng);
    // either the factory or the stack refuses the mismatched stage
    if let Ok(wrong) = wrong {
        assert!(stack_generator(g.clone(), wrong).is_err());
    }
    let mut g2 = g;
    assert!(g2
        .push(arch.autoencoder(1, &[1, 16, 16], &mut rng).unwrap())
        .is_err());
    assert_eq!(g2, before);

    let mut d = arch.discriminator_stack(&[1, 16, 16], 1, &mut rng).unwrap();
    assert!(d
        .push(arch.discriminator(2, &[1, 16, 16], &mut rng).unwrap())
        .is_err());
    assert!(reconstruct(&g2, &Tensor::zeros(&[1, 1, 8, 8])).is_err());
}

#[test]
fn zero_discriminator_outputs_half() {
    let mut rng = SeededRng::new(46);
    let (_, mut d) = two_stage(&mut rng);
    for p in d.params_mut() {
        p.value.fill(0.0);
    }
    let p = discriminate(&d, &Tensor::from_fn(&[5, 1, 16, 16], |_| rng.uniform())).unwrap();
    assert_eq!(p.shape(), &[5, 1]);
    assert!(p.data().iter().all(|&v| v == 0.5));
}

#[test]
fn discriminator_range_on_random_inputs() {
    let mut rng = SeededRng::new(47);
    let (_, d) = two_stage(&mut rng);
    let x = Tensor::from_fn(&[1000, 1, 16, 16], |_| rng.uniform_range(-1.0, 2.0));
    let p = discriminate(&d, &x).unwrap();
    assert_eq!(p.shape(), &[1000, 1]);
    assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn overcomplete_stage_rejected_unless_allowed() {
    let mut rng = SeededRng::new(48);
    let arch = Architecture {
        stage_channels: vec![8],
        ..Architecture::default()
    };
    assert!(arch.autoencoder(1, &[1, 8, 8], &mut rng).is_err());
    let loose = Architecture {
        allow_overcomplete: true,
        ..arch
    };
    assert!(loose.autoencoder(1, &[1, 8, 8], &mut rng).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn reconstruct_preserves_shape(size in 1usize..4, channels in 1usize..3, m in 1usize..4, batch in 1usize..3, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let side = 8 * size;
        let arch = Architecture::default();
        let g = arch.generator_stack(&[channels, side, side], m, &mut rng).unwrap();
        let x = Tensor::from_fn(&[batch, channels, side, side], |_| rng.uniform());
        let y = reconstruct(&g, &x).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert_eq!(g.depth(), m);
    }
}
