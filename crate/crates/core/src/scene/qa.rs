//! Templated spatial question answering and the relation oracle behind it.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SceneGraph, SceneObject};
use crate::tokenizer::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Proximity,
    Contact,
    Size,
    Orientation,
    Describe,
}

impl Relation {
    pub const SPATIAL: [Relation; 4] = [Relation::Proximity, Relation::Contact, Relation::Size, Relation::Orientation];

    pub fn name(self) -> &'static str {
        match self {
            Relation::Proximity => "proximity",
            Relation::Contact => "contact",
            Relation::Size => "size",
            Relation::Orientation => "orientation",
            Relation::Describe => "describe",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationThresholds {
    /// Center distance below which two objects are "near", meters.
    pub proximity: f64,
    /// Box gap at or below which two objects are "touching", meters.
    pub contact_epsilon: f64,
}

impl Default for RelationThresholds {
    fn default() -> Self {
        Self { proximity: 1.0, contact_epsilon: 0.02 }
    }
}

/// Bearing of A's center around B's center in the floor plane, in 90° sectors.
/// +x is "right", +y (away from the front camera) is "behind".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sector {
    Right,
    Behind,
    Left,
    Front,
}

impl Sector {
    fn phrase(self) -> &'static str {
        match self {
            Sector::Right => "right of",
            Sector::Behind => "behind",
            Sector::Left => "left of",
            Sector::Front => "in front of",
        }
    }
}

/// What an answer asserts, extracted from the answer grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnswerKey {
    Yes,
    No,
    Sector(Sector),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaSample {
    pub scene_id: usize,
    pub question_text: String,
    pub answer_text: String,
    pub relation: Relation,
    pub referenced_object_ids: Vec<u32>,
}

fn center_distance(a: &SceneObject, b: &SceneObject) -> f64 {
    (0..3).map(|i| (a.center[i] - b.center[i]).powi(2)).sum::<f64>().sqrt()
}

pub fn is_near(a: &SceneObject, b: &SceneObject, t: &RelationThresholds) -> bool {
    center_distance(a, b) < t.proximity
}

pub fn is_touching(a: &SceneObject, b: &SceneObject, t: &RelationThresholds) -> bool {
    a.aabb().gap(&b.aabb()) <= t.contact_epsilon
}

pub fn orientation_sector(a: &SceneObject, b: &SceneObject) -> Sector {
    let angle = (a.center[1] - b.center[1]).atan2(a.center[0] - b.center[0]);
    let k = ((angle + FRAC_PI_4) / FRAC_PI_2).floor().rem_euclid(4.0) as usize;
    [Sector::Right, Sector::Behind, Sector::Left, Sector::Front][k]
}

pub fn question_for(relation: Relation, a: &SceneObject, b: &SceneObject) -> String {
    let (a, b) = (a.category.name(), b.category.name());
    match relation {
        Relation::Proximity => format!("is the {a} near the {b}"),
        Relation::Contact => format!("is the {a} touching the {b}"),
        Relation::Size => format!("is the {a} larger than the {b}"),
        Relation::Orientation => format!("where is the {a} relative to the {b}"),
        Relation::Describe => "what is in the room".to_string(),
    }
}

/// The relation oracle: the templated answer the scene geometry implies.
/// `ids` holds the referenced objects (A, B) for relational questions.
pub fn answer_for(scene: &SceneGraph, relation: Relation, ids: &[u32], t: &RelationThresholds) -> Option<String> {
    if relation == Relation::Describe {
        let names: Vec<&str> = scene.objects.iter().map(|o| o.category.name()).collect();
        return Some(match names.as_slice() {
            [] => "the room is empty".to_string(),
            [one] => format!("the room has {one}"),
            [init @ .., last] => format!("the room has {} and {last}", init.join(" ")),
        });
    }
    let (a, b) = match ids {
        [a, b] => (scene.object(*a)?, scene.object(*b)?),
        _ => return None,
    };
    let (an, bn) = (a.category.name(), b.category.name());
    Some(match relation {
        Relation::Proximity if is_near(a, b, t) => format!("yes the {an} is near the {bn}"),
        Relation::Proximity => format!("no the {an} is not near the {bn}"),
        Relation::Contact if is_touching(a, b, t) => format!("yes the {an} is touching the {bn}"),
        Relation::Contact => format!("no the {an} is not touching the {bn}"),
        Relation::Size if a.volume() > b.volume() => format!("yes the {an} is larger than the {bn}"),
        Relation::Size => format!("no the {an} is smaller than the {bn}"),
        Relation::Orientation => format!("the {an} is {} the {bn}", orientation_sector(a, b).phrase()),
        Relation::Describe => unreachable!(),
    })
}

/// Extracts the asserted polarity or sector; `None` when the text does not
/// follow the answer grammar for `relation`.
pub fn parse_answer(relation: Relation, text: &str) -> Option<AnswerKey> {
    let words = normalize(text);
    match relation {
        Relation::Proximity | Relation::Contact | Relation::Size => match words.first().map(String::as_str) {
            Some("yes") => Some(AnswerKey::Yes),
            Some("no") => Some(AnswerKey::No),
            _ => None,
        },
        Relation::Orientation => {
            let found: Vec<Sector> = words
                .iter()
                .filter_map(|w| match w.as_str() {
                    "left" => Some(Sector::Left),
                    "right" => Some(Sector::Right),
                    "front" => Some(Sector::Front),
                    "behind" => Some(Sector::Behind),
                    _ => None,
                })
                .collect();
            match found.as_slice() {
                [one] => Some(AnswerKey::Sector(*one)),
                _ => None,
            }
        }
        Relation::Describe => None,
    }
}

/// One sample per spatial relation plus a description when the scene has
/// two or more objects; only the description otherwise. Yes/no relations
/// pick a pair of the randomly chosen polarity whenever one exists.
pub fn make_qa(scene: &SceneGraph, scene_id: usize, seed: u64, t: &RelationThresholds) -> Vec<QaSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(5);
    let pairs: Vec<(u32, u32)> = scene
        .objects
        .iter()
        .flat_map(|a| scene.objects.iter().filter(move |b| b.id != a.id).map(move |b| (a.id, b.id)))
        .collect();

    let mut emit = |relation: Relation, ids: Vec<u32>| {
        let question_text = match ids.as_slice() {
            [a, b] => question_for(relation, scene.object(*a).unwrap(), scene.object(*b).unwrap()),
            _ => question_for(relation, &scene.objects[0], &scene.objects[0]),
        };
        let answer_text = answer_for(scene, relation, &ids, t).expect("oracle answers its own sample");
        out.push(QaSample { scene_id, question_text, answer_text, relation, referenced_object_ids: ids });
    };

    if !pairs.is_empty() {
        for relation in [Relation::Proximity, Relation::Contact] {
            let want_yes = rng.gen_bool(0.5);
            let holds = |&(a, b): &(u32, u32)| {
                let (a, b) = (scene.object(a).unwrap(), scene.object(b).unwrap());
                match relation {
                    Relation::Proximity => is_near(a, b, t),
                    _ => is_touching(a, b, t),
                }
            };
            let (yes, no): (Vec<_>, Vec<_>) = pairs.iter().partition(|p| holds(p));
            let pool = if want_yes && !yes.is_empty() || no.is_empty() { yes } else { no };
            let &(a, b) = pool.choose(&mut rng).expect("nonempty pair pool");
            emit(relation, vec![a, b]);
        }
        for relation in [Relation::Size, Relation::Orientation] {
            let &(a, b) = pairs.choose(&mut rng).expect("nonempty pairs");
            emit(relation, vec![a, b]);
        }
    }
    if !scene.objects.is_empty() {
        emit(Relation::Describe, Vec::new());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::{geometry::Aabb, Category, DatasetConfig};
    use super::*;

    fn obj(id: u32, category: Category, center: [f64; 3], size: [f64; 3]) -> SceneObject {
        SceneObject { id, category, center, size, yaw: 0.0 }
    }

    fn scene(objects: Vec<SceneObject>) -> SceneGraph {
        SceneGraph { room: Aabb { min: [-10.0; 3], max: [10.0; 3] }, objects }
    }

    #[test]
    fn contact_at_zero_gap() {
        let s = scene(vec![
            obj(0, Category::Box, [0.0, 0.0, 0.5], [1.0; 3]),
            obj(1, Category::Chair, [1.0, 0.0, 0.5], [1.0; 3]),
        ]);
        let a = answer_for(&s, Relation::Contact, &[0, 1], &RelationThresholds::default()).unwrap();
        assert!(a.starts_with("yes"));
    }

    #[test]
    fn size_by_volume() {
        let s = scene(vec![
            obj(0, Category::Bed, [0.0, 0.0, 1.0], [2.0; 3]),
            obj(1, Category::Box, [5.0, 0.0, 0.5], [1.0; 3]),
        ]);
        let a = answer_for(&s, Relation::Size, &[0, 1], &RelationThresholds::default()).unwrap();
        assert_eq!(a, "yes the bed is larger than the box");
        assert_eq!(parse_answer(Relation::Size, &a), Some(AnswerKey::Yes));
    }

    #[test]
    fn far_apart_is_not_near() {
        let s = scene(vec![
            obj(0, Category::Box, [0.0, 0.0, 0.0], [0.2; 3]),
            obj(1, Category::Chair, [5.0, 0.0, 0.0], [0.2; 3]),
        ]);
        let t = RelationThresholds { proximity: 1.0, contact_epsilon: 0.02 };
        let a = answer_for(&s, Relation::Proximity, &[0, 1], &t).unwrap();
        assert_eq!(parse_answer(Relation::Proximity, &a), Some(AnswerKey::No));
        assert_eq!(orientation_sector(s.object(1).unwrap(), s.object(0).unwrap()), Sector::Right);
        assert_eq!(orientation_sector(s.object(0).unwrap(), s.object(1).unwrap()), Sector::Left);
    }

    #[test]
    fn sectors_cover_the_plane() {
        let b = obj(0, Category::Box, [0.0; 3], [0.1; 3]);
        let at = |x: f64, y: f64| orientation_sector(&obj(1, Category::Bed, [x, y, 0.0], [0.1; 3]), &b);
        assert_eq!(at(0.0, 2.0), Sector::Behind);
        assert_eq!(at(0.0, -2.0), Sector::Front);
        assert_eq!(at(-2.0, 0.1), Sector::Left);
        assert_eq!(at(2.0, -0.1), Sector::Right);
    }

    #[test]
    fn single_object_only_describes() {
        let s = scene(vec![obj(0, Category::Box, [0.0; 3], [1.0; 3])]);
        let qa = make_qa(&s, 0, 1, &RelationThresholds::default());
        assert_eq!(qa.len(), 1);
        assert_eq!(qa[0].relation, Relation::Describe);
        assert_eq!(qa[0].answer_text, "the room has box");
    }

    #[test]
    fn parse_rejects_off_grammar() {
        assert_eq!(parse_answer(Relation::Contact, ""), None);
        assert_eq!(parse_answer(Relation::Contact, "maybe"), None);
        assert_eq!(parse_answer(Relation::Orientation, "left right"), None);
        assert_eq!(parse_answer(Relation::Orientation, "the box is in front of the bed"), Some(AnswerKey::Sector(Sector::Front)));
    }

    #[test]
    fn oracle_round_trip_and_length() {
        let cfg = DatasetConfig::default();
        for seed in 0..50 {
            let s = super::super::generate_scene(seed, &cfg).unwrap();
            for q in make_qa(&s, 0, seed, &cfg.thresholds()) {
                let again = answer_for(&s, q.relation, &q.referenced_object_ids, &cfg.thresholds()).unwrap();
                assert_eq!(again, q.answer_text);
                assert!(normalize(&q.answer_text).len() <= 12, "{}", q.answer_text);
            }
        }
    }
}
