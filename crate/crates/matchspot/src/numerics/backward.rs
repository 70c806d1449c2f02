use std::collections::{HashMap, HashSet};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Topologically ordered view of the graph below a loss node: every
/// operation appears after all of its parents. Built fresh per backward call
/// by a deterministic depth-first walk, so repeated backward passes from
/// identical forward states visit nodes in the same order.
pub(crate) struct Tape<T: Real> {
    pub(crate) nodes: Vec<Tensor<T>>,
}

impl<T: Real> Tape<T> {
    pub(crate) fn build(root: &Tensor<T>) -> Self {
        enum Frame<T: Real> {
            Enter(Tensor<T>),
            Exit(Tensor<T>),
        }
        let mut nodes = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack = vec![Frame::Enter(root.clone())];
        while let Some(frame) = stack.pop() {
            match frame {
                Frame::Enter(t) => {
                    if !visited.insert(t.id()) {
                        continue;
                    }
                    stack.push(Frame::Exit(t.clone()));
                    if let Some(op) = t.op() {
                        for p in op.parents() {
                            if p.requires_grad() && !visited.contains(&p.id()) {
                                stack.push(Frame::Enter(p.clone()));
                            }
                        }
                    }
                }
                Frame::Exit(t) => nodes.push(t),
            }
        }
        Tape { nodes }
    }
}

impl<T: Real> Tensor<T> {
    /// Reverse-mode pass from a scalar loss. Populates `grad` on every
    /// requires-grad tensor reachable from the loss, accumulating (+=) into
    /// any gradient already present.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape()),
            ));
        }
        if !self.requires_grad() {
            return Err(Error::numeric(
                "backward",
                "loss does not depend on any requires-grad tensor".to_string(),
            ));
        }
        let tape = Tape::build(self);
        let mut flowing: HashMap<u64, Vec<T>> = HashMap::new();
        flowing.insert(self.id(), vec![T::one()]);
        for node in tape.nodes.iter().rev() {
            let Some(g) = flowing.remove(&node.id()) else {
                continue;
            };
            node.accumulate_grad(&g);
            if let Some(op) = node.op() {
                op.backward_into(node, &g, &mut |parent, contribution| {
                    match flowing.entry(parent.id()) {
                        std::collections::hash_map::Entry::Occupied(mut e) => {
                            for (acc, v) in e.get_mut().iter_mut().zip(contribution) {
                                *acc += v;
                            }
                        }
                        std::collections::hash_map::Entry::Vacant(e) => {
                            e.insert(contribution);
                        }
                    }
                });
            }
        }
        Ok(())
    }
}
