mod common;

use common::*;
use ecodrive::solver::{solve, ConvexProgram, Status};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn random_qps_match_active_set_enumeration() {
    for seed in 0..100 {
        let p = random_qp(seed);
        let (_, f_star) = active_set_oracle(&p);
        let prog = ConvexProgram::from_dense(&p.q, &p.c, &p.a_eq, &p.b_eq, &p.a_in, &p.b_in);
        let sol = solve(&prog).unwrap();
        assert_eq!(sol.status, Status::Optimal, "seed {seed}");
        assert!(sol.kkt_residual <= 1e-6);
        assert!(prog.max_violation(&sol.x) <= 1e-7, "seed {seed}");
        let rel = (sol.objective - f_star).abs() / (1.0 + f_star.abs());
        assert!(rel <= 1e-5, "seed {seed}: {} vs {}", sol.objective, f_star);
    }
}

#[test]
fn two_variable_lps_match_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let mut g: Vec<[f64; 2]> = vec![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        let mut h = vec![10.0, 10.0, 10.0, 10.0];
        for _ in 0..rng.random_range(1..6) {
            let a = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            g.push(a);
            h.push(rng.random_range(0.1..5.0));
        }
        let c = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let oracle = lp2_vertex_oracle(c, &g, &h).unwrap();
        let mut p = ConvexProgram::new(2);
        p.linear = c.to_vec();
        for (row, b) in g.iter().zip(&h) {
            p.add_le(vec![(0, row[0]), (1, row[1])], *b);
        }
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, Status::Optimal, "case {case}");
        assert!((sol.objective - oracle).abs() <= 1e-8, "case {case}: {} vs {oracle}", sol.objective);
    }
}
