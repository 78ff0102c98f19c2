use super::*;
use crate::mpo::{build_ising_mpo, ops, Mpo};
use crate::tensor::{eigh, ONE};
use ndarray::{Array4, Axis};

fn paramagnet() -> Mpo {
    let mut w = Array4::zeros((2, 2, 2, 2));
    for s in 0..2 {
        w[[0, 0, s, s]] = ONE;
        w[[1, 1, s, s]] = ONE;
    }
    let sx = ops::sx();
    for a in 0..2 {
        for b in 0..2 {
            w[[1, 0, a, b]] = -sx[[a, b]];
        }
    }
    Mpo::from_bulk(w).unwrap()
}

fn small_config(chi: usize) -> EngineConfig {
    EngineConfig { chi, init_sites: 4, seed: 7, ..Default::default() }
}

#[test]
fn init_energy_matches_dense_chain() {
    let mpo = build_ising_mpo(1.0, 1.0);
    let eng = Engine::new(mpo.clone(), EngineConfig { chi: 16, ..Default::default() }).unwrap();
    let e = eigh(&mpo.to_dense(8)).unwrap().0[0];
    assert!((eng.init_energy() - e).abs() < 1e-10);
    assert_eq!(eng.bond_dim(), 16);
}

#[test]
fn init_sites_grow_with_chi() {
    let eng = Engine::new(build_ising_mpo(1.0, 1.0), EngineConfig { chi: 32, ..Default::default() }).unwrap();
    assert_eq!(eng.bond_dim(), 32);
}

#[test]
fn paramagnet_converges_quickly() {
    let mut eng = Engine::new(paramagnet(), small_config(2)).unwrap();
    let mut last = None;
    for _ in 0..5 {
        last = Some(eng.step().unwrap());
    }
    let r = last.unwrap();
    assert!(r.delta_a < 1e-8, "{:?}", r);
    assert!((r.energy_per_site.unwrap() + 1.0).abs() < 1e-8, "{:?}", r);
}

#[test]
fn round_invariants_hold() {
    let mut eng = Engine::new(build_ising_mpo(1.0, 1.5), small_config(8)).unwrap();
    for _ in 0..60 {
        let r = eng.step().unwrap();
        assert!(r.xi > 0.0 && r.xi <= 1.0);
        assert!(r.xi >= 0.09, "xi {} in round {}", r.xi, r.round);
        assert!(r.eigenvalue <= r.refer_energy + 1e-12 * r.refer_energy.abs().max(1.0), "{:?}", r);
        assert!((eng.state().a_refer.norm() - 1.0).abs() < 1e-12);
        assert!(r.gamma >= 0.0);
    }
}

#[test]
fn tfi_converges_within_two_hundred_rounds() {
    let mut eng = Engine::new(build_ising_mpo(1.0, 1.5), small_config(8)).unwrap();
    let mut hit = None;
    for _ in 0..200 {
        let r = eng.step().unwrap();
        if r.delta_a < 1e-8 && hit.is_none() {
            hit = Some(r.round);
        }
    }
    assert!(hit.is_some(), "never reached 1e-8");
}

#[test]
fn eigenvalue_stays_bounded_with_subtraction() {
    let mut eng = Engine::new(build_ising_mpo(1.0, 1.5), small_config(8)).unwrap();
    let mut e = 0.0;
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let r = eng.step().unwrap();
        if let Some(x) = r.energy_per_site {
            e = x;
        }
        if k >= 5 {
            worst = worst.max(r.eigenvalue.abs());
        }
    }
    assert!(worst <= 10.0 * e.abs(), "max |f| {} vs e {}", worst, e);

    let cfg = EngineConfig { energy_subtraction: false, ..small_config(8) };
    let mut eng = Engine::new(build_ising_mpo(1.0, 1.5), cfg).unwrap();
    let mut vals = Vec::new();
    for _ in 0..50 {
        vals.push(eng.step().unwrap().eigenvalue);
    }
    // grows roughly linearly: second half moves as much as the first
    let d1 = (vals[24] - vals[4]).abs();
    let d2 = (vals[49] - vals[29]).abs();
    assert!(vals[49].abs() > 10.0 * e.abs());
    assert!(d2 > 0.5 * d1);
}

#[test]
fn growth_preserves_rayleigh_quotient() {
    let mut eng = Engine::new(build_ising_mpo(1.0, 1.2), small_config(4)).unwrap();
    for _ in 0..10 {
        eng.step().unwrap();
    }
    let (before, after) = eng.grow_bond_dimension(8, 0.0).unwrap();
    assert!((before - after).abs() < 1e-12 * before.abs().max(1.0));
    assert_eq!(eng.bond_dim(), 8);
    let m = eng.mpo().bond_dim();
    let id = eng.left().index_axis(Axis(1), m - 1).to_owned();
    assert!(frobenius(&(&id - &identity(8))) < 1e-12);
    let id = eng.right().index_axis(Axis(1), 0).to_owned();
    assert!(frobenius(&(&id - &identity(8))) < 1e-12);
    for _ in 0..20 {
        let r = eng.step().unwrap();
        assert!(r.eigenvalue.is_finite());
    }
}

#[test]
fn growth_to_same_size_is_identity() {
    let mut eng = Engine::new(build_ising_mpo(1.0, 1.2), small_config(4)).unwrap();
    for _ in 0..5 {
        eng.step().unwrap();
    }
    let l = eng.left().clone();
    let r = eng.right().clone();
    let st = eng.state().clone();
    eng.grow_bond_dimension(4, 0.0).unwrap();
    assert_eq!(&l, eng.left());
    assert_eq!(&r, eng.right());
    assert_eq!(&st, eng.state());
}

#[test]
fn embedding_random_state_keeps_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mpo = build_ising_mpo(1.0, 0.8);
    let m = mpo.bond_dim();
    let rand_env = |rng: &mut ChaCha8Rng| {
        let e = Array3::from_shape_fn((3, m, 3), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        // Hermitian per slot is not needed for the quotient identity
        e
    };
    let l = rand_env(&mut rng);
    let r = rand_env(&mut rng);
    let a = SiteTensor::random(&mut rng, 3, 3, 2);
    let (lb, rb, ab) = embed_bond(&l, &r, &a, 5).unwrap();
    let h = EffectiveOperator::from_mpo(&l, &mpo, &r).unwrap();
    let hb = EffectiveOperator::from_mpo(&lb, &mpo, &rb).unwrap();
    let v = a.to_vector();
    let vb = ab.to_vector();
    let e = inner(&v, &h.apply(&v));
    let eb = inner(&vb, &hb.apply(&vb));
    assert!((e - eb).norm() < 1e-12 * e.norm());
}

#[test]
fn krylov_insertion_matches_direct_absorption() {
    let mut eng = Engine::new(build_ising_mpo(1.0, 1.5), small_config(4)).unwrap();
    for _ in 0..30 {
        eng.step().unwrap();
    }
    let (ql, _) = eng.prev_q.clone().unwrap();
    let shifted = eng.mpo().add_local_term(&identity(2).mapv(|z| z * -eng.state().shift)).unwrap();
    let w = shifted.bulk().clone();
    let ins = |e: &Array3<C64>| absorb_left(e, &ql, &w);
    let l0 = eng.left().clone();
    let one = krylov_insert(&l0, &ins, 1, 12).unwrap();
    let direct = ins(&l0).unwrap();
    assert!(frobenius(&(&one - &direct)) < 1e-12 * frobenius(&direct));
    let eight = krylov_insert(&l0, &ins, 8, 12).unwrap();
    let mut direct = l0.clone();
    for _ in 0..8 {
        direct = ins(&direct).unwrap();
    }
    assert!(frobenius(&(&eight - &direct)) < 1e-10 * frobenius(&direct));
    assert!(matches!(krylov_insert(&l0, &ins, 3, 1), Err(ImpsError::Precondition(_))));
}

#[test]
fn mirror_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = SiteTensor::random(&mut rng, 4, 4, 2);
    let m = mirror_symmetrize(&a).unwrap();
    assert_eq!(growth::mirror_defect(&m), 0.0);
    assert!((m.norm() - 1.0).abs() < 1e-14);
    let again = mirror_symmetrize(&m).unwrap();
    assert!(frobenius(&(&again.data - &m.data)) < 1e-14);
    let anti = SiteTensor::new(&a.data - &a.data.view().permuted_axes([1, 0, 2]));
    assert!(matches!(mirror_symmetrize(&anti), Err(ImpsError::Degenerate(_))));
}

#[test]
fn mirror_flag_keeps_every_center_symmetric() {
    let cfg = EngineConfig { mirror_symmetry: true, ..small_config(8) };
    let mut eng = Engine::new(build_ising_mpo(1.0, 1.5), cfg).unwrap();
    for _ in 0..40 {
        eng.step().unwrap();
        assert!(growth::mirror_defect(eng.center()) < 1e-12);
    }
}

#[test]
fn odd_init_sites_rejected() {
    let cfg = EngineConfig { init_sites: 7, ..Default::default() };
    assert!(matches!(Engine::new(build_ising_mpo(1.0, 1.0), cfg), Err(ImpsError::Precondition(_))));
}
