use super::{QueryGraph, Term, VarId, TARGET};

/// One variable's binding step: the atoms whose object is that variable, in
/// fold order (positive atoms first, then negated ones, each group in
/// declaration order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanStep {
    pub var: VarId,
    pub atoms: Vec<usize>,
    /// Variables that later steps still read as atom subjects.
    pub live_after: Vec<VarId>,
}

/// Evaluation order for one conjunctive branch. Every scorer folds atom
/// scores in this order, so exact and approximate search agree bit for bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchPlan {
    pub steps: Vec<PlanStep>,
}

impl BranchPlan {
    /// Plan for branch `disjunct` of a validated query.
    pub fn new(q: &QueryGraph, disjunct: usize) -> Self {
        let atoms = &q.disjuncts[disjunct];
        let order = q.topo_order(disjunct).expect("plan requires a validated query");
        let mut steps: Vec<PlanStep> = order
            .iter()
            .map(|&v| {
                let inbound = |neg: bool| {
                    atoms
                        .iter()
                        .enumerate()
                        .filter(move |(_, a)| a.object == Term::Var(v) && a.negated == neg)
                        .map(|(i, _)| i)
                };
                PlanStep { var: v, atoms: inbound(false).chain(inbound(true)).collect(), live_after: Vec::new() }
            })
            .collect();
        for i in 0..steps.len() {
            let bound: Vec<VarId> = order[..=i].to_vec();
            let later = &steps[i + 1..];
            let mut live: Vec<VarId> = bound
                .into_iter()
                .filter(|&u| later.iter().flat_map(|s| &s.atoms).any(|&a| atoms[a].subject == Term::Var(u)))
                .collect();
            live.sort_unstable();
            steps[i].live_after = live;
        }
        debug_assert_eq!(steps.last().map(|s| s.var), Some(TARGET));
        Self { steps }
    }

    /// Atoms in global fold order.
    pub fn atom_order(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().flat_map(|s| s.atoms.iter().copied())
    }

    /// Number of variables other than the target.
    pub fn num_existential(&self) -> usize {
        self.steps.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queries::QueryType;

    #[test]
    fn plans_for_templates() {
        let pin = QueryType::Pin.template().instantiate_dummy();
        let p = BranchPlan::new(&pin, 0);
        assert_eq!(p.steps.len(), 2);
        assert_eq!(p.steps[0].var, 1);
        assert_eq!(p.steps[0].live_after, [1]);
        assert_eq!(p.steps[1].var, 0);
        // positive q(V, T) before negated r(b, T)
        assert_eq!(p.steps[1].atoms, [1, 2]);

        let pni = QueryType::Pni.template().instantiate_dummy();
        let p = BranchPlan::new(&pni, 0);
        assert_eq!(p.steps[1].atoms, [2, 1]);

        let p3 = BranchPlan::new(&QueryType::P3.template().instantiate_dummy(), 0);
        let live: Vec<_> = p3.steps.iter().map(|s| s.live_after.clone()).collect();
        assert_eq!(live, [vec![1], vec![2], vec![]]);
        assert_eq!(p3.num_existential(), 2);
    }
}
