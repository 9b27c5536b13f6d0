//! Superclass hierarchy mining.
//!
//! A frozen base classifier scores each novel class's K shots; the mean logit
//! vector is the class representative, and the base classes with the largest
//! mean logits become that novel class's anchors. Every base class anchors
//! exactly one superclass (so the superclass classifier can also classify
//! base instances); every novel class joins the superclasses of its top-gamma
//! anchors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassId, LabeledInstance};
use crate::error::{Error, Result};
use crate::heads::LinearHead;

/// Mean base-classifier logit vector of one novel class's shots.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassRepresentative {
    pub class_id: ClassId,
    /// One entry per base class.
    pub logit_means: Vec<f64>,
}

/// One superclass: a single base anchor plus the novel classes assigned to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Superclass {
    pub anchor: ClassId,
    /// Fine-grained member classes; the anchor is always `members[0]`, novel
    /// members follow in assignment order.
    pub members: Vec<ClassId>,
}

impl Superclass {
    pub fn n_fine(&self) -> usize {
        self.members.len()
    }

    /// Position of `class_id` within this superclass, if it is a member.
    pub fn position_of(&self, class_id: ClassId) -> Option<usize> {
        self.members.iter().position(|&m| m == class_id)
    }
}

/// The mined superclass hierarchy.
///
/// Invariants, checked on construction and deserialization: one superclass
/// per base class, anchor first in each member list, members distinct, every
/// novel class in exactly `gamma` superclasses, and class ids dense with base
/// ids below novel ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HierarchyRepr", into = "HierarchyRepr")]
pub struct Hierarchy {
    gamma: usize,
    superclasses: Vec<Superclass>,
    /// class id -> (superclass index, position within its member list)
    membership: BTreeMap<ClassId, Vec<(usize, usize)>>,
    n_classes: usize,
}

#[derive(Serialize, Deserialize)]
struct HierarchyRepr {
    gamma: usize,
    superclasses: Vec<Superclass>,
}

impl From<Hierarchy> for HierarchyRepr {
    fn from(h: Hierarchy) -> Self {
        HierarchyRepr {
            gamma: h.gamma,
            superclasses: h.superclasses,
        }
    }
}

impl TryFrom<HierarchyRepr> for Hierarchy {
    type Error = Error;

    fn try_from(repr: HierarchyRepr) -> Result<Self> {
        Hierarchy::new(repr.gamma, repr.superclasses)
    }
}

impl Hierarchy {
    pub fn new(gamma: usize, superclasses: Vec<Superclass>) -> Result<Self> {
        if gamma == 0 {
            return Err(Error::Config("gamma must be positive".into()));
        }
        let n_super = superclasses.len();
        let mut membership: BTreeMap<ClassId, Vec<(usize, usize)>> = BTreeMap::new();
        let mut anchor_seen = vec![false; n_super];
        for (i, sc) in superclasses.iter().enumerate() {
            if sc.members.first() != Some(&sc.anchor) {
                return Err(Error::Contract(format!(
                    "superclass {i} must list its anchor {} first",
                    sc.anchor
                )));
            }
            if sc.anchor >= n_super {
                return Err(Error::Contract(format!(
                    "superclass {i} anchor {} is not a base class (base ids are 0..{n_super})",
                    sc.anchor
                )));
            }
            if anchor_seen[sc.anchor] {
                return Err(Error::Contract(format!(
                    "base class {} anchors more than one superclass",
                    sc.anchor
                )));
            }
            anchor_seen[sc.anchor] = true;
            for (pos, &m) in sc.members.iter().enumerate() {
                if pos > 0 && m < n_super {
                    return Err(Error::Contract(format!(
                        "superclass {i} contains base class {m} as a non-anchor member"
                    )));
                }
                let entries = membership.entry(m).or_default();
                if entries.iter().any(|&(sc_idx, _)| sc_idx == i) {
                    return Err(Error::Contract(format!(
                        "class {m} appears twice in superclass {i}"
                    )));
                }
                entries.push((i, pos));
            }
        }
        let n_classes = membership.keys().next_back().map_or(0, |&c| c + 1);
        for c in 0..n_classes {
            let entries = membership.get(&c).ok_or_else(|| {
                Error::Contract(format!("class ids are not dense: {c} is missing"))
            })?;
            let expected = if c < n_super { 1 } else { gamma };
            if entries.len() != expected {
                return Err(Error::Contract(format!(
                    "class {c} belongs to {} superclasses, expected {expected}",
                    entries.len()
                )));
            }
        }
        Ok(Hierarchy {
            gamma,
            superclasses,
            membership,
            n_classes,
        })
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn superclasses(&self) -> &[Superclass] {
        &self.superclasses
    }

    /// Number of superclasses; equals the number of base classes.
    pub fn n_super(&self) -> usize {
        self.superclasses.len()
    }

    pub fn n_base(&self) -> usize {
        self.superclasses.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn is_base(&self, class_id: ClassId) -> bool {
        class_id < self.n_base()
    }

    /// The (superclass index, member position) pairs of one class.
    pub fn memberships(&self, class_id: ClassId) -> Result<&[(usize, usize)]> {
        self.membership
            .get(&class_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Contract(format!("unknown class id {class_id}")))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Mean logit vector of one novel class's shots under the frozen base head.
pub fn class_representative(
    base_head: &LinearHead,
    shots: &[LabeledInstance],
) -> Result<ClassRepresentative> {
    let first = shots
        .first()
        .ok_or_else(|| Error::Contract("class representative needs at least one shot".into()))?;
    let class_id = first.class_id;
    if shots.iter().any(|s| s.class_id != class_id) {
        return Err(Error::Contract(
            "all shots of a class representative must share one class".into(),
        ));
    }
    let mut mean = vec![0.0; base_head.n_out];
    for shot in shots {
        let logits = base_head.forward(&shot.features)?;
        for (m, z) in mean.iter_mut().zip(&logits) {
            *m += z;
        }
    }
    let k = shots.len() as f64;
    for m in mean.iter_mut() {
        *m /= k;
    }
    Ok(ClassRepresentative {
        class_id,
        logit_means: mean,
    })
}

/// The `gamma` base classes with the largest representative components,
/// descending; ties broken toward the smaller class id.
pub fn top_gamma(rep: &ClassRepresentative, gamma: usize) -> Result<Vec<ClassId>> {
    let n_base = rep.logit_means.len();
    if gamma == 0 || gamma > n_base {
        return Err(Error::Config(format!(
            "gamma must be in 1..={n_base} (got {gamma})"
        )));
    }
    let mut order: Vec<ClassId> = (0..n_base).collect();
    order.sort_by(|&a, &b| {
        rep.logit_means[b]
            .partial_cmp(&rep.logit_means[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(gamma);
    Ok(order)
}

/// Mine the superclass hierarchy: one superclass per base class, each novel
/// class assigned to its top-`gamma` anchors. Deterministic in the base head
/// and shots.
pub fn build_hierarchy(
    base_head: &LinearHead,
    novel_shots: &BTreeMap<ClassId, Vec<LabeledInstance>>,
    gamma: usize,
) -> Result<Hierarchy> {
    let n_base = base_head.n_out;
    let mut superclasses: Vec<Superclass> = (0..n_base)
        .map(|anchor| Superclass {
            anchor,
            members: vec![anchor],
        })
        .collect();
    for (&class_id, shots) in novel_shots {
        if class_id < n_base {
            return Err(Error::Contract(format!(
                "class {class_id} is a base class, not novel"
            )));
        }
        let rep = class_representative(base_head, shots)?;
        if rep.class_id != class_id {
            return Err(Error::Contract(format!(
                "shots keyed under class {class_id} are labeled {}",
                rep.class_id
            )));
        }
        for anchor in top_gamma(&rep, gamma)? {
            superclasses[anchor].members.push(class_id);
        }
    }
    Hierarchy::new(gamma, superclasses)
}

/// Multi-hot superclass label: entry `i` is 1 iff the class belongs to the
/// `i`-th superclass.
pub fn encode_superclass_label(hierarchy: &Hierarchy, class_id: ClassId) -> Result<Vec<f64>> {
    let mut label = vec![0.0; hierarchy.n_super()];
    for &(sc, _) in hierarchy.memberships(class_id)? {
        label[sc] = 1.0;
    }
    Ok(label)
}

/// One-hot fine-grained label of a class within superclass `sc_index`.
pub fn encode_finegrained_label(
    hierarchy: &Hierarchy,
    sc_index: usize,
    class_id: ClassId,
) -> Result<Vec<f64>> {
    let sc = hierarchy
        .superclasses()
        .get(sc_index)
        .ok_or_else(|| Error::Contract(format!("no superclass {sc_index}")))?;
    let pos = sc.position_of(class_id).ok_or_else(|| {
        Error::Contract(format!(
            "class {class_id} is not a member of superclass {sc_index}"
        ))
    })?;
    let mut label = vec![0.0; sc.n_fine()];
    label[pos] = 1.0;
    Ok(label)
}
