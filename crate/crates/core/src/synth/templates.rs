use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::sample::{Conversation, SceneSample, SegTarget};
use crate::text::{count_seg, SEG_TOKEN};
use crate::{CoreError, Result};

/// How a template's roles `a` (and `b` for pair bindings) are filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binding {
    /// `a` is directly occluded by `b`.
    OccludedBy,
    /// `a` is partly hidden.
    Occluded,
    /// `a` is fully visible.
    Unoccluded,
    /// `a` and `b` are the only two objects of their shape, `a` nearer.
    SameShapePair,
    /// `a` has the strictly highest occlusion rate, which is positive.
    MostHidden,
    /// `a` has the strictly largest amodal area.
    Largest,
    /// `a` is the only object of its color.
    UniqueColor,
}

impl Binding {
    pub fn arity(self) -> usize {
        match self {
            Binding::OccludedBy | Binding::SameShapePair => 2,
            _ => 1,
        }
    }

    pub fn needs_occlusion(self) -> bool {
        matches!(self, Binding::OccludedBy | Binding::Occluded | Binding::MostHidden)
    }

    fn instances(self, scene: &SceneSample) -> Vec<Vec<usize>> {
        let objs = &scene.objects;
        let index = |id: &str| objs.iter().position(|o| o.id == id);
        match self {
            Binding::OccludedBy => scene
                .occlusion_pairs()
                .iter()
                .filter_map(|p| Some(vec![index(&p.occludee)?, index(&p.occluder)?]))
                .collect(),
            Binding::Occluded => (0..objs.len())
                .filter(|&i| objs[i].occlusion_rate > 0.0)
                .map(|i| vec![i])
                .collect(),
            Binding::Unoccluded => (0..objs.len())
                .filter(|&i| objs[i].occlusion_rate == 0.0)
                .map(|i| vec![i])
                .collect(),
            Binding::SameShapePair => {
                let mut by_shape: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
                for id in &scene.depth_order {
                    if let Some(i) = index(id) {
                        by_shape.entry(objs[i].category.as_str()).or_default().push(i);
                    }
                }
                by_shape.into_values().filter(|v| v.len() == 2).collect()
            }
            Binding::MostHidden => {
                unique_argmax(objs, |o| o.occlusion_rate)
                    .filter(|&i| objs[i].occlusion_rate > 0.0)
                    .map(|i| vec![vec![i]])
                    .unwrap_or_default()
            }
            Binding::Largest => unique_argmax(objs, |o| o.amodal_mask.count() as f64)
                .map(|i| vec![vec![i]])
                .unwrap_or_default(),
            Binding::UniqueColor => (0..objs.len())
                .filter(|&i| {
                    objs[i].color.is_some()
                        && objs.iter().filter(|o| o.color == objs[i].color).count() == 1
                })
                .map(|i| vec![i])
                .collect(),
        }
    }
}

fn unique_argmax(objs: &[SegTarget], key: impl Fn(&SegTarget) -> f64) -> Option<usize> {
    let best = objs.iter().map(&key).fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<usize> = (0..objs.len()).filter(|&i| key(&objs[i]) == best).collect();
    (winners.len() == 1).then(|| winners[0])
}

/// Question/answer patterns. Placeholders: `{a}`, `{b}` expand to an object
/// descriptor ("red ellipse"); `{a_shape}`, `{a_color}` to its parts. Every
/// `[SEG]` in the answer must directly follow a role placeholder, which
/// makes that role a target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QATemplate {
    pub name: String,
    pub question: String,
    pub answer: String,
    pub binding: Binding,
}

impl QATemplate {
    pub fn new(name: &str, question: &str, answer: &str, binding: Binding) -> Result<Self> {
        let t = Self {
            name: name.into(),
            question: question.into(),
            answer: answer.into(),
            binding,
        };
        let slots = t.target_roles().len();
        let segs = count_seg(answer);
        if slots != segs || segs == 0 {
            return Err(CoreError::Config(format!(
                "template {name}: {segs} [SEG] slots but {slots} role targets"
            )));
        }
        let roles = ["a", "b"];
        for r in t.target_roles() {
            if roles.iter().position(|&x| x == r).is_none_or(|i| i >= binding.arity()) {
                return Err(CoreError::Config(format!(
                    "template {name}: role {r} not bound by {binding:?}"
                )));
            }
        }
        Ok(t)
    }

    /// Roles whose placeholder is followed by `[SEG]`, in answer order.
    pub fn target_roles(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut rest = self.answer.as_str();
        while let Some(pos) = rest.find(SEG_TOKEN) {
            let before = &rest[..pos];
            for role in ["a", "b"] {
                if before.ends_with(&format!("{{{role}}}")) {
                    out.push(role);
                }
            }
            rest = &rest[pos + SEG_TOKEN.len()..];
        }
        out
    }

    fn instantiate(&self, scene: &SceneSample, roles: &[usize]) -> Conversation {
        let fill = |pattern: &str| {
            let mut s = pattern.to_string();
            for (name, &i) in ["a", "b"].iter().zip(roles) {
                let o = &scene.objects[i];
                s = s
                    .replace(&format!("{{{name}_shape}}"), &o.category)
                    .replace(&format!("{{{name}_color}}"), o.color.as_deref().unwrap_or(""))
                    .replace(&format!("{{{name}}}"), &o.descriptor());
            }
            s
        };
        let target_ids = self
            .target_roles()
            .iter()
            .map(|r| scene.objects[roles[if *r == "a" { 0 } else { 1 }]].id.clone())
            .collect();
        Conversation {
            question: fill(&self.question),
            answer: fill(&self.answer),
            target_ids,
        }
    }
}

pub fn default_templates() -> Vec<QATemplate> {
    use Binding::*;
    let specs: [(&str, &str, &str, Binding); 11] = [
        (
            "occlusion_pair",
            "What is partly hidden behind the {b}? Show both objects.",
            "The {a}[SEG] is partly hidden behind the {b}[SEG].",
            OccludedBy,
        ),
        (
            "identify_occludee",
            "Which object does the {b} cover?",
            "The {b} covers the {a}[SEG].",
            OccludedBy,
        ),
        (
            "identify_occluder",
            "Which object is covering part of the {a}?",
            "The {b}[SEG] covers part of the {a}.",
            OccludedBy,
        ),
        (
            "reveal",
            "What should be moved to reveal the whole {a}?",
            "Move the {b}[SEG] to reveal the {a}[SEG].",
            OccludedBy,
        ),
        (
            "on_top",
            "What lies on top of the {a}?",
            "The {b}[SEG] lies on top of the {a}.",
            OccludedBy,
        ),
        (
            "full_shape",
            "What does the whole {a} look like, including its hidden part?",
            "Here is the whole {a}[SEG].",
            Occluded,
        ),
        (
            "unoccluded",
            "Is the {a} covered by anything?",
            "No, the {a}[SEG] is fully visible.",
            Unoccluded,
        ),
        (
            "same_shape",
            "Where are the two {a_shape}s?",
            "The {a}[SEG] and the {b}[SEG].",
            SameShapePair,
        ),
        (
            "most_hidden",
            "Which object is hidden the most?",
            "The {a}[SEG] is hidden the most.",
            MostHidden,
        ),
        (
            "largest",
            "Which object would be the largest if nothing covered it?",
            "The {a}[SEG] would be the largest.",
            Largest,
        ),
        (
            "find_color",
            "Where is the {a_color} object?",
            "It is the {a}[SEG].",
            UniqueColor,
        ),
    ];
    specs
        .iter()
        .map(|(n, q, a, b)| QATemplate::new(n, q, a, *b).expect("built-in template is well formed"))
        .collect()
}

/// The subset of [`default_templates`] that only binds in occluded scenes.
pub fn occlusion_templates() -> Vec<QATemplate> {
    default_templates()
        .into_iter()
        .filter(|t| t.binding.needs_occlusion())
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConversationBatch {
    pub conversations: Vec<Conversation>,
    pub warnings: Vec<String>,
}

/// Instantiates every template binding, drops questions whose answers would
/// be ambiguous, then draws up to `n` distinct conversations with `seed`.
pub fn generate_conversations(
    scene: &SceneSample,
    templates: &[QATemplate],
    n: usize,
    seed: u64,
) -> ConversationBatch {
    let mut by_question: BTreeMap<String, Vec<Conversation>> = BTreeMap::new();
    let mut order = Vec::new();
    for t in templates {
        for roles in t.binding.instances(scene) {
            let conv = t.instantiate(scene, &roles);
            let group = by_question.entry(conv.question.clone()).or_insert_with(|| {
                order.push(conv.question.clone());
                Vec::new()
            });
            if !group.contains(&conv) {
                group.push(conv);
            }
        }
    }

    let mut warnings = Vec::new();
    let mut pool: Vec<Conversation> = Vec::new();
    for q in &order {
        let group = &by_question[q];
        if group.len() == 1 {
            pool.push(group[0].clone());
        }
    }
    if pool.is_empty() {
        warnings.push(format!(
            "no template among {} is satisfiable for scene {}",
            templates.len(),
            scene.sample_id
        ));
        return ConversationBatch {
            conversations: Vec::new(),
            warnings,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    if pool.len() < n {
        warnings.push(format!(
            "scene {} supports {} of {n} requested conversations",
            scene.sample_id,
            pool.len()
        ));
    }
    pool.truncate(n);
    ConversationBatch {
        conversations: pool,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn built_in_templates_are_well_formed() {
        let ts = default_templates();
        assert!(ts.len() >= 8);
        assert_eq!(ts[0].target_roles(), vec!["a", "b"]);
        assert_eq!(ts[3].target_roles(), vec!["b", "a"]);
    }

    #[test]
    fn rejects_slot_role_mismatch() {
        assert!(QATemplate::new("x", "q", "The {a}[SEG] and [SEG].", Binding::Occluded).is_err());
        assert!(QATemplate::new("x", "q", "The {b}[SEG].", Binding::Occluded).is_err());
        assert!(QATemplate::new("x", "q", "No marker.", Binding::Occluded).is_err());
    }
}
