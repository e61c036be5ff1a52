//! Stopping-time decomposition driven by reducing-operator ratios:
//! below a root cube, descendants are stopped the first time the
//! forward ratio exceeds lambda1 or the inverse ratio exceeds lambda2,
//! generation by generation, together with the measure of each
//! generation's union.

use crate::dyadic::{DyadicCube, DyadicLattice};
use crate::error::{Error, Result};
use crate::linalg::{op_norm, Mat};
use crate::weights::{MatrixWeight, ReducingField, ReducingMethod};
use serde::Serialize;
use std::sync::Arc;

pub const DEFAULT_LAMBDA1: f64 = 16.0;

/// lambda2 tied to the weight: 4 * characteristic^(p'/p).
pub fn suggested_lambda2(ap_characteristic: f64, p: f64) -> f64 {
    4.0 * ap_characteristic.powf(1.0 / (p - 1.0))
}

/// Which of the two ratio conditions fired first. The forward ratio is
/// tested before the inverse one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopTrigger {
    VRatio,
    VInverseRatio,
}

#[derive(Debug, Clone, Serialize)]
pub struct StoppedCube {
    pub cube: DyadicCube,
    /// The previous-generation cube this cube was stopped against.
    pub ancestor: DyadicCube,
    pub trigger: StopTrigger,
    /// The ratio value that fired: ||V_J V_I^-1||^p or ||V_J^-1 V_I||^p'.
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StoppingTree {
    pub root: DyadicCube,
    pub d: usize,
    pub p: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// generations[j - 1] holds generation j; generation 0 is the root.
    pub generations: Vec<Vec<StoppedCube>>,
}

/// One row of the packing table for a tree.
#[derive(Debug, Clone, Serialize)]
pub struct PackingRow {
    pub j: usize,
    pub measure: f64,
    pub bound: f64,
    pub pass: bool,
}

impl StoppingTree {
    pub fn generation_count(&self) -> usize {
        self.generations.len()
    }

    /// Generation j >= 1, empty once the recursion has died out.
    pub fn generation(&self, j: usize) -> &[StoppedCube] {
        if j == 0 || j > self.generations.len() {
            &[]
        } else {
            &self.generations[j - 1]
        }
    }

    /// |union of generation j| / |root| as an exact dyadic ratio.
    pub fn packing_measure(&self, j: usize) -> Result<f64> {
        if j == 0 {
            return Err(Error::validation(
                "packing is defined for generations j >= 1",
            ));
        }
        Ok(self
            .generation(j)
            .iter()
            .map(|s| 0.5f64.powi((self.d * (s.cube.level - self.root.level)) as i32))
            .sum())
    }

    /// Packing table with the 2^-j bound for every nonempty generation.
    pub fn packing_rows(&self) -> Vec<PackingRow> {
        (1..=self.generations.len())
            .map(|j| {
                let measure = self.packing_measure(j).expect("j >= 1");
                let bound = 0.5f64.powi(j as i32);
                PackingRow { j, measure, bound, pass: measure <= bound }
            })
            .collect()
    }
}

/// Builds the decomposition for one root cube, computing reducing
/// operators for the whole lattice first.
pub fn stopping_time(
    w: &MatrixWeight,
    lattice: &Arc<DyadicLattice>,
    root: &DyadicCube,
    p: f64,
    lambda1: f64,
    lambda2: f64,
) -> Result<StoppingTree> {
    let field = ReducingField::compute(w, lattice, p, ReducingMethod::Auto)?;
    stopping_time_with_field(&field, root, lambda1, lambda2)
}

pub fn stopping_time_with_field(
    field: &ReducingField,
    root: &DyadicCube,
    lambda1: f64,
    lambda2: f64,
) -> Result<StoppingTree> {
    if !(lambda1 > 1.0 && lambda2 > 1.0) {
        return Err(Error::validation("lambda1 and lambda2 must exceed 1"));
    }
    let lattice = field.lattice().clone();
    if !lattice.is_valid_cube(root) {
        return Err(Error::validation("root cube is not interior to the lattice"));
    }
    let p = field.p();
    let pp = p / (p - 1.0);
    let v_of = |cube: &DyadicCube| -> &Mat {
        let idx = lattice.cube_index(cube).expect("visited cubes are interior");
        field.pairs()[idx].v.mat()
    };

    let mut generations: Vec<Vec<StoppedCube>> = Vec::new();
    let mut current = vec![*root];
    loop {
        let mut stopped = Vec::new();
        for anc in &current {
            let v_anc = v_of(anc).clone();
            let v_anc_inv = {
                let idx = lattice.cube_index(anc).expect("interior");
                field.pairs()[idx].v.inverse().into_mat()
            };
            let mut stack = lattice.children(anc);
            while let Some(cube) = stack.pop() {
                let v = v_of(&cube);
                let forward = op_norm(&v.mul(&v_anc_inv)).powf(p);
                if forward > lambda1 {
                    stopped.push(StoppedCube {
                        cube,
                        ancestor: *anc,
                        trigger: StopTrigger::VRatio,
                        value: forward,
                    });
                    continue;
                }
                let idx = lattice.cube_index(&cube).expect("interior");
                let v_inv = field.pairs()[idx].v.inverse();
                let inverse = op_norm(&v_inv.mat().mul(&v_anc)).powf(pp);
                if inverse > lambda2 {
                    stopped.push(StoppedCube {
                        cube,
                        ancestor: *anc,
                        trigger: StopTrigger::VInverseRatio,
                        value: inverse,
                    });
                    continue;
                }
                stack.extend(lattice.children(&cube));
            }
        }
        if stopped.is_empty() {
            break;
        }
        current = stopped.iter().map(|s| s.cube).collect();
        generations.push(stopped);
    }
    Ok(StoppingTree {
        root: *root,
        d: lattice.d(),
        p,
        lambda1,
        lambda2,
        generations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::random_a2_family;

    fn root() -> DyadicCube {
        DyadicCube::new(0, [0, 0, 0])
    }

    fn two_cell_spike(l: usize, m: f64) -> (Arc<DyadicLattice>, MatrixWeight) {
        let lat = Arc::new(DyadicLattice::standard(1, l).unwrap());
        let half = lat.cell_count() / 2;
        let cells: Vec<Mat> = (0..lat.cell_count())
            .map(|c| Mat::diag(&[if c < half { 1.0 } else { m }]))
            .collect();
        let w =
            MatrixWeight::from_cells(lat.clone(), cells, crate::weights::WeightDescriptor::None)
                .unwrap();
        (lat, w)
    }

    #[test]
    fn identity_weight_stops_nothing() {
        let lat = Arc::new(DyadicLattice::standard(2, 3).unwrap());
        let w = MatrixWeight::identity(lat.clone(), 2);
        let tree = stopping_time(&w, &lat, &root(), 2.0, 1.01, 1.01).unwrap();
        assert_eq!(tree.generation_count(), 0);
        assert!(tree.generation(1).is_empty());
    }

    #[test]
    fn spike_stops_both_children_with_distinct_triggers() {
        // w = 1 on the left half, 100 on the right, p = 2. With
        // V_I = sqrt(mean), the left child trips the inverse ratio
        // (50.5 > 1.5) and the right child trips the forward ratio
        // (200/101 > 1.5); neither subtree stops again since w is
        // constant inside each half.
        let (lat, w) = two_cell_spike(3, 100.0);
        let tree = stopping_time(&w, &lat, &root(), 2.0, 1.5, 1.5).unwrap();
        assert_eq!(tree.generation_count(), 1);
        let gen = tree.generation(1);
        assert_eq!(gen.len(), 2);
        let left = gen.iter().find(|s| s.cube.coords[0] == 0).unwrap();
        let right = gen.iter().find(|s| s.cube.coords[0] == 1).unwrap();
        assert_eq!(left.cube.level, 1);
        assert_eq!(left.trigger, StopTrigger::VInverseRatio);
        assert!((left.value - 50.5).abs() < 1e-9);
        assert_eq!(right.trigger, StopTrigger::VRatio);
        assert!((right.value - 200.0 / 101.0).abs() < 1e-9);
        assert_eq!(left.ancestor, root());
    }

    #[test]
    fn thresholds_above_every_ratio_stop_nothing() {
        let (lat, w) = two_cell_spike(3, 100.0);
        let tree = stopping_time(&w, &lat, &root(), 2.0, 1e6, 1e6).unwrap();
        assert_eq!(tree.generation_count(), 0);
    }

    #[test]
    fn generations_nest_verify_triggers_and_stay_disjoint() {
        let lat = Arc::new(DyadicLattice::standard(1, 6).unwrap());
        let family = random_a2_family(&lat, 2, 1, 404, 2.0, 64.0).unwrap();
        let (w, _) = &family[0];
        let field = ReducingField::compute(w, &lat, 2.0, ReducingMethod::Auto).unwrap();
        let tree = stopping_time_with_field(&field, &root(), 1.05, 1.05).unwrap();
        assert!(tree.generation_count() >= 1, "weight too tame for the test");

        let span = |c: &DyadicCube| {
            let low = lat.cube_low_units(c)[0];
            (low, low + lat.level_side_units(c.level))
        };
        for j in 1..=tree.generation_count() {
            let gen = tree.generation(j);
            for (a, sa) in gen.iter().enumerate() {
                // Trigger value recomputes to the recorded one and the
                // lattice parent inside the subtree does not trigger.
                let pair = field.get(&sa.cube).unwrap();
                let anc = field.get(&sa.ancestor).unwrap();
                let fwd = op_norm(&pair.v.mat().mul(&anc.v.inverse().into_mat())).powf(2.0);
                let inv = op_norm(&pair.v.inverse().mat().mul(anc.v.mat())).powf(2.0);
                match sa.trigger {
                    StopTrigger::VRatio => assert!((fwd - sa.value).abs() < 1e-9),
                    StopTrigger::VInverseRatio => {
                        assert!(fwd <= tree.lambda1);
                        assert!((inv - sa.value).abs() < 1e-9);
                    }
                }
                if let Some(par) = lat.parent(&sa.cube) {
                    if par != sa.ancestor {
                        let pp = field.get(&par).unwrap();
                        let pf = op_norm(&pp.v.mat().mul(&anc.v.inverse().into_mat())).powf(2.0);
                        let pi = op_norm(&pp.v.inverse().mat().mul(anc.v.mat())).powf(2.0);
                        assert!(pf <= tree.lambda1 && pi <= tree.lambda2);
                    }
                }
                // Pairwise disjoint within the generation.
                for sb in gen.iter().skip(a + 1) {
                    let (al, ah) = span(&sa.cube);
                    let (bl, bh) = span(&sb.cube);
                    assert!(ah <= bl || bh <= al);
                }
                // Nested in the previous generation.
                let (al, ah) = span(&sa.cube);
                let (pl, ph) = span(&sa.ancestor);
                assert!(pl <= al && ah <= ph);
            }
        }
    }

    #[test]
    fn packing_is_exact_and_nonincreasing() {
        let (lat, w) = two_cell_spike(3, 100.0);
        let tree = stopping_time(&w, &lat, &root(), 2.0, 1.5, 1.5).unwrap();
        // Both level-1 children stop, so generation 1 covers the root.
        assert_eq!(tree.packing_measure(1).unwrap(), 1.0);
        assert_eq!(tree.packing_measure(2).unwrap(), 0.0);
        assert!(tree.packing_measure(0).is_err());

        let lat6 = Arc::new(DyadicLattice::standard(1, 6).unwrap());
        let family = random_a2_family(&lat6, 2, 1, 404, 2.0, 64.0).unwrap();
        let tree6 = stopping_time(&family[0].0, &lat6, &root(), 2.0, 1.05, 1.05).unwrap();
        let mut prev = f64::INFINITY;
        for j in 1..=tree6.generation_count() + 1 {
            let m = tree6.packing_measure(j).unwrap();
            assert!(m <= prev + 1e-15);
            prev = m;
        }
    }

    #[test]
    fn packing_rows_carry_the_dyadic_bound() {
        let (lat, w) = two_cell_spike(3, 100.0);
        let tree = stopping_time(&w, &lat, &root(), 2.0, 1.5, 1.5).unwrap();
        let rows = tree.packing_rows();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].j, 1);
        assert_eq!(rows[0].bound, 0.5);
        assert!(!rows[0].pass);
    }

    #[test]
    fn parameter_validation() {
        let lat = Arc::new(DyadicLattice::standard(1, 2).unwrap());
        let w = MatrixWeight::identity(lat.clone(), 1);
        assert!(stopping_time(&w, &lat, &root(), 2.0, 1.0, 2.0).is_err());
        let off = DyadicCube::new(0, [5, 0, 0]);
        assert!(stopping_time(&w, &lat, &off, 2.0, 2.0, 2.0).is_err());
    }
}
