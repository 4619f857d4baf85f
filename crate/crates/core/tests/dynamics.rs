mod common;

use nalgebra::{DVector, Rotation2, Vector2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{jacobian_error, random_drone_point, random_truck_point, rk4_order};
use replan::dynamics::{rollout, DroneModel, Dynamics, TruckTrailerModel};

#[test]
fn jacobians_match_finite_differences_at_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..1000 {
        let (x, u) = random_drone_point(&mut rng);
        let e = jacobian_error(&DroneModel::default(), &x, &u);
        assert!(e < 1e-5, "drone at {x}: {e:e}");
        let (x, u) = random_truck_point(&mut rng);
        let e = jacobian_error(&TruckTrailerModel::default(), &x, &u);
        assert!(e < 1e-5, "truck at {x}: {e:e}");
    }
}

#[test]
fn rk4_is_fourth_order_on_both_models() {
    let drone = DroneModel::default();
    let x = DVector::from_vec(vec![0.0, 0.0, 1.0, 0.5, -0.3, 0.2, 0.1, -0.2, 0.3]);
    let u = DVector::from_vec(vec![0.4, -0.3, 0.2, 11.0]);
    let order = rk4_order(&drone, &x, &u, 0.1);
    assert!((3.5..=4.5).contains(&order), "drone order {order}");

    let truck = TruckTrailerModel::default();
    let x = DVector::from_vec(vec![1.0, -1.0, 0.3, -0.2]);
    let u = DVector::from_vec(vec![0.5, 0.6]);
    let order = rk4_order(&truck, &x, &u, 0.1);
    assert!((3.5..=4.5).contains(&order), "truck order {order}");
}

#[test]
fn drone_hover_rollout_stays_put() {
    let drone = DroneModel::default();
    let x0 = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.7]);
    let hover = DVector::from_vec(vec![0.0, 0.0, 0.0, drone.g]);
    assert_eq!(drone.ode(&x0, &hover).unwrap(), DVector::zeros(9));
    let states = rollout(&drone, &x0, &vec![hover; 50], 0.1).unwrap();
    assert_eq!(states.len(), 51);
    assert!(states.iter().all(|x| (x - &x0).amax() < 1e-12));
}

#[test]
fn truck_at_rest_rollout_is_constant() {
    let truck = TruckTrailerModel::default();
    let x0 = DVector::from_vec(vec![0.5, 0.2, -0.4, 0.1]);
    let states = rollout(&truck, &x0, &vec![DVector::zeros(2); 20], 0.1).unwrap();
    assert!(states.iter().all(|x| *x == x0));
}

proptest! {
    #[test]
    fn truck_ode_is_rotation_invariant(
        px in -5.0f64..5.0,
        py in -5.0f64..5.0,
        th1 in -3.0f64..3.0,
        th0 in -3.0f64..3.0,
        v0 in -1.0f64..1.0,
        w0 in -1.0f64..1.0,
        alpha in -3.2f64..3.2,
    ) {
        let truck = TruckTrailerModel::default();
        let u = DVector::from_vec(vec![v0, w0]);
        let x = DVector::from_vec(vec![px, py, th1, th0]);
        let p = Rotation2::new(alpha) * Vector2::new(px, py);
        let xr = DVector::from_vec(vec![p.x, p.y, th1 + alpha, th0 + alpha]);
        let f = truck.ode(&x, &u).unwrap();
        let fr = truck.ode(&xr, &u).unwrap();
        let v = Rotation2::new(alpha) * Vector2::new(f[0], f[1]);
        prop_assert!((v.x - fr[0]).abs() < 1e-12 && (v.y - fr[1]).abs() < 1e-12);
        prop_assert!((f[2] - fr[2]).abs() < 1e-12);
        prop_assert!((f[3] - fr[3]).abs() < 1e-12);
    }

    #[test]
    fn drone_jacobians_hold_near_the_attitude_limit(
        roll in -1.5f64..1.5,
        pitch in -1.5f64..1.5,
        thrust in 0.0f64..20.0,
    ) {
        let x = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.3, 0.0, -0.2, roll, pitch, 0.4]);
        let u = DVector::from_vec(vec![0.3, -0.1, 0.2, thrust]);
        prop_assert!(jacobian_error(&DroneModel::default(), &x, &u) < 1e-5);
    }
}
