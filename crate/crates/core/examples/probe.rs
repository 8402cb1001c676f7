// Temporary diagnostic: noise level of the IV regression under different
// Z+ constructions and exploration laws.
use nalgebra::{DMatrix, DVector};
use tsallis_lq::lstd::SamplePair;
use tsallis_lq::*;

fn paper_model() -> LqModel {
    let market = MarketSpec::new(
        1.057,
        DVector::from_vec(vec![0.21, 0.28, 0.22]),
        DMatrix::identity(3, 3) * 0.99,
    )
    .unwrap();
    let problem = MvProblem {
        market,
        r_cost: DMatrix::from_row_slice(
            3,
            3,
            &[0.08, 0.02, 0.01, 0.02, 0.07, 0.015, 0.01, 0.015, 0.09],
        ),
        target: 2.0,
        lambda: 2.0,
        gamma: 0.9,
        tau: 0.7,
        q: DeformationParam::new(0.8).unwrap(),
        noise_mode: MvNoiseMode::PerAsset,
    };
    problem.to_lq().unwrap()
}

fn main() {
    let model = paper_model();
    let (_, opt, _) = solve(&model, &SolverConfig::default()).unwrap();
    // behavior: the fill-induced gain with its Theta-derived covariance
    let k = DMatrix::from_row_slice(3, 1, &[0.2929, 0.2929, 0.2929]);

    for (label, law) in [
        ("clipped", ExplorationLaw::QGaussianClipped),
        ("uniform", ExplorationLaw::UniformBall),
    ] {
        for analytic_lift in [false, true] {
            let sigma = opt.sigma().clone();
            let behavior = QGaussianPolicy::new(k.clone(), sigma, model.q()).unwrap();
            // evaluated policy for the reference Theta: covariance of the
            // actual continuation law
            let eval_sigma = match (law, analytic_lift) {
                (_, true) => behavior.sigma().clone(),
                (ExplorationLaw::UniformBall, false) => {
                    DMatrix::identity(3, 3) * (0.8 * 0.8 / 5.0)
                }
                (ExplorationLaw::QGaussianClipped, false) => behavior.sigma().clone(), // approx
            };
            let eval_policy = QGaussianPolicy::new(k.clone(), eval_sigma, model.q()).unwrap();
            let (_, theta_ref) = policy_evaluate(&model, &eval_policy).unwrap();

            for n in [1200usize, 24000] {
                let pe = PeConfig {
                    trajectories: n,
                    horizon: 1,
                    r_nu: 0.8,
                    r_x: 1.0,
                    exploration: law,
                };
                let pairs_raw = generate_rollouts(&model, &behavior, &pe, 11).unwrap();
                let pairs: Vec<SamplePair> = pairs_raw
                    .into_iter()
                    .map(|p| {
                        if analytic_lift {
                            let z_plus = moment_lift(&p.x_plus, &eval_policy);
                            SamplePair { z_plus, ..p }
                        } else {
                            p
                        }
                    })
                    .collect();
                let rows: Vec<RegressionRow> = pairs
                    .iter()
                    .map(|p| make_row(p, &model, &eval_policy).unwrap())
                    .collect();
                let theta_hat = iv_batch(&rows, 1, 3).unwrap();
                let err =
                    (theta_hat.matrix() - theta_ref.matrix()).norm() / theta_ref.matrix().norm();
                let k_hat = nalgebra::Cholesky::new(theta_hat.uu())
                    .map(|c| c.solve(&theta_hat.ux()));
                let k_true = nalgebra::Cholesky::new(theta_ref.uu())
                    .unwrap()
                    .solve(&theta_ref.ux());
                let k_err = k_hat
                    .map(|kh| (&kh - &k_true).norm() / k_true.norm())
                    .unwrap_or(f64::NAN);
                println!(
                    "law={label:8} analytic_lift={analytic_lift:5} N={n:>6}: theta rel err {err:.3e}, gain rel err {k_err:.3e}"
                );
            }
        }
    }
}
