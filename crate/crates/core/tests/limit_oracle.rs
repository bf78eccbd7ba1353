//! The limit formulas against a direct sum over all split partitions of the
//! auxiliary graph, keeping the `η = 0` terms.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use pw_traffic::graph::{build_auxiliary, classify, reference_shapes, AuxLabel, TestGraph};
use pw_traffic::hermite::Polynomial;
use pw_traffic::limits::{delta0_graphon, limit_pw, LimitParams};
use pw_traffic::models::StepProfile;
use pw_traffic::partitions::{restrict, split_partitions};
use pw_traffic::Rational;

fn r(a: i64, b: i64) -> Rational {
    Rational::new(a.into(), b.into())
}

fn pow(x: &Rational, k: i64) -> Rational {
    let base = if k < 0 { x.recip() } else { x.clone() };
    (0..k.abs()).fold(Rational::one(), |acc, _| acc * &base)
}

/// Σ over split `π` with `η(π) = 0` of `Ψ^π · δ⁰[W′, X′] · δ⁰[Γ]`, plus a
/// check of the simplified `ψ0` exponent on every contributing term.
fn brute_force(t: &TestGraph<u32>, params: &LimitParams) -> Rational {
    let aux = build_auxiliary(t).unwrap();
    let half_excess: i64 = t.edges().iter().map(|e| (e.label as i64 - 1) / 2).sum();
    let refs: Vec<usize> = (0..aux.num_reference).collect();
    let mut total = Rational::zero();
    for pi in split_partitions(aux.graph.colors()) {
        let mut groups: HashMap<(AuxLabel, usize, usize), usize> = HashMap::new();
        for e in aux.graph.edges() {
            *groups.entry((e.label, pi.block_of(e.src), pi.block_of(e.dst))).or_insert(0) += 1;
        }
        if groups.values().any(|&m| m < 2) {
            continue;
        }
        let eta = aux.eta(&pi).unwrap().eta;
        assert!(eta <= Rational::zero(), "positive η on a supported partition");
        if !eta.is_zero() {
            continue;
        }
        let mut moments = Rational::one();
        for (&(label, _, _), &m) in &groups {
            moments *= match m {
                2 => Rational::one(),
                3 => match label {
                    AuxLabel::W => params.m3_w().clone(),
                    AuxLabel::X => params.m3_x().clone(),
                },
                _ => panic!("multiplicity {m} at η = 0"),
            };
        }
        if moments.is_zero() {
            continue;
        }
        let q = aux.graph.quotient(&pi).unwrap();
        let [v0, v1, v2] = q.color_counts();
        let psi0_exp = v0 as i64 - half_excess;
        let rho = restrict(&pi, &refs).unwrap();
        let class = classify(&t.quotient(&rho).unwrap()).unwrap();
        assert!(class.is_pseudo_cactus);
        assert_eq!(psi0_exp, (class.two_cycles.len() + class.long_cycles.len()) as i64);
        let psi = pow(params.psi(0), psi0_exp) * pow(params.psi(1), v1 as i64) * pow(params.psi(2), v2 as i64);
        total += psi * moments * delta0_graphon(&q, params).unwrap();
    }
    total
}

fn as_poly(t: &TestGraph<u32>) -> TestGraph<Polynomial> {
    t.map_labels(|e| Polynomial::monomial(e.label as usize))
}

fn param_grid() -> Vec<LimitParams> {
    let step_w = StepProfile::new(vec![vec![r(1, 1), r(2, 1)], vec![r(1, 2), r(1, 1)]]).unwrap();
    let step_x = StepProfile::new(vec![vec![r(1, 1), r(1, 2)], vec![r(3, 2), r(1, 1)]]).unwrap();
    vec![
        LimitParams::constant([r(1, 3), r(1, 3), r(1, 3)], r(3, 2), r(3, 2)).unwrap(),
        LimitParams::new([r(1, 2), r(1, 4), r(1, 4)], r(3, 2), r(-1, 1), step_w, step_x).unwrap(),
    ]
}

/// Odd labels on a shape, each at most `max`, with the total internal count capped.
fn labelings(shape: &TestGraph<()>, max: u32, budget: u32) -> Vec<TestGraph<u32>> {
    let odd: Vec<u32> = (1..=max).step_by(2).collect();
    let k = shape.num_edges();
    let mut out = Vec::new();
    for code in 0..odd.len().pow(k as u32) {
        let labels: Vec<u32> = (0..k).map(|i| odd[code / odd.len().pow(i as u32) % odd.len()]).collect();
        if labels.iter().sum::<u32>() > budget {
            continue;
        }
        let mut i = 0;
        out.push(shape.map_labels(|_| {
            i += 1;
            labels[i - 1]
        }));
    }
    out
}

#[test]
fn limit_pw_matches_partition_sum() {
    let params = param_grid();
    let mut checked = 0;
    for shape in reference_shapes(3) {
        for t in labelings(&shape, 5, 9) {
            for p in &params {
                let exact = limit_pw(&as_poly(&t), p).unwrap();
                assert_eq!(exact, brute_force(&t, p), "graph {:?}", t.edges());
                checked += 1;
            }
        }
    }
    assert!(checked > 50);
}

#[test]
fn four_cycle_matches_partition_sum() {
    let mut t = TestGraph::with_colors(&[2, 1, 2, 1]).unwrap();
    t.add_edge(0, 1, 1u32).unwrap();
    t.add_edge(2, 1, 3u32).unwrap();
    t.add_edge(2, 3, 1u32).unwrap();
    t.add_edge(0, 3, 1u32).unwrap();
    for p in param_grid() {
        let exact = limit_pw(&as_poly(&t), &p).unwrap();
        assert!(!exact.is_zero());
        assert_eq!(exact, brute_force(&t, &p));
    }
}

#[test]
fn moment_one_constant_profile() {
    let mut t = TestGraph::with_colors(&[2, 1]).unwrap();
    t.add_edge(0, 1, 1u32).unwrap();
    t.add_edge(0, 1, 1u32).unwrap();
    let p = &param_grid()[0];
    assert_eq!(brute_force(&t, p), Rational::new(BigInt::from(1), BigInt::from(27)));
}
