//! The closed referring-expression grammar of the synthetic corpus.
//!
//! ```text
//! expr     := "the" [selector] desc [relation "the" desc]
//! selector := left | right | leftmost | rightmost | middle
//! desc     := [size] [color] noun
//! relation := "left of" | "right of" | "above" | "below" | "next to"
//! ```
//!
//! [`resolve`] is the enumeration oracle: it returns every object of a scene
//! that satisfies a parsed expression. The generator only emits expressions
//! for which it returns exactly the intended target.

use serde::{Deserialize, Serialize};

use super::{BoundingBox, Category, Color, Scene, SizeClass};
use crate::vocab::tokenize;

/// Minimum centre separation, as a fraction of canvas width, for ordinal
/// selectors (left/right/leftmost/rightmost/middle) to apply.
pub const SELECTOR_MARGIN: f64 = 0.03;
/// Maximum box gap, as a fraction of canvas width, for "next to".
pub const NEXT_TO_GAP: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpressionKind {
    SemanticOnly,
    SpatioSemantic,
}

/// One corpus expression with its target. `text` is the raw surface string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedExpression {
    pub text: String,
    pub target: String,
    pub kind: ExpressionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Description {
    pub size: Option<SizeClass>,
    pub color: Option<Color>,
    pub category: Category,
}

impl Description {
    pub fn matches(&self, obj: &super::SceneObject) -> bool {
        obj.category == self.category
            && self.color.is_none_or(|c| c == obj.color)
            && self.size.is_none_or(|s| s == obj.size_class)
    }

    fn words(&self, noun: &'static str, size_word: Option<&'static str>) -> Vec<&'static str> {
        let mut out = Vec::with_capacity(3);
        if let Some(w) = size_word {
            out.push(w);
        } else if let Some(s) = self.size {
            out.push(s.words()[0]);
        }
        if let Some(c) = self.color {
            out.push(c.words()[0]);
        }
        out.push(noun);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Selector {
    Left,
    Right,
    Leftmost,
    Rightmost,
    Middle,
}

impl Selector {
    pub const ALL: [Selector; 5] = [
        Selector::Left,
        Selector::Right,
        Selector::Leftmost,
        Selector::Rightmost,
        Selector::Middle,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Selector::Left => "left",
            Selector::Right => "right",
            Selector::Leftmost => "leftmost",
            Selector::Rightmost => "rightmost",
            Selector::Middle => "middle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
    NextTo,
}

impl Relation {
    pub const ALL: [Relation; 5] = [
        Relation::LeftOf,
        Relation::RightOf,
        Relation::Above,
        Relation::Below,
        Relation::NextTo,
    ];

    pub fn words(self) -> &'static [&'static str] {
        match self {
            Relation::LeftOf => &["left", "of"],
            Relation::RightOf => &["right", "of"],
            Relation::Above => &["above"],
            Relation::Below => &["below"],
            Relation::NextTo => &["next", "to"],
        }
    }

    /// Whether `target` stands in this relation to `context`.
    pub fn holds(self, target: &BoundingBox, context: &BoundingBox, canvas_width: f64) -> bool {
        match self {
            Relation::LeftOf => target.x_max <= context.x_min,
            Relation::RightOf => target.x_min >= context.x_max,
            Relation::Above => target.y_max <= context.y_min,
            Relation::Below => target.y_min >= context.y_max,
            Relation::NextTo => target.gap(context) <= NEXT_TO_GAP * canvas_width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReferringForm {
    Plain(Description),
    Selected {
        selector: Selector,
        description: Description,
    },
    Related {
        target: Description,
        relation: Relation,
        context: Description,
    },
}

impl ReferringForm {
    pub fn kind(&self) -> ExpressionKind {
        match self {
            ReferringForm::Plain(_) => ExpressionKind::SemanticOnly,
            _ => ExpressionKind::SpatioSemantic,
        }
    }

    /// Surface text using canonical words.
    pub fn text(&self) -> String {
        self.realize(&mut |words| words[0])
    }

    /// Surface text, choosing among synonym words with `pick`.
    pub fn realize(&self, pick: &mut dyn FnMut(&'static [&'static str]) -> &'static str) -> String {
        let mut desc_words = |d: &Description| {
            let noun = pick(d.category.words());
            let size = d.size.map(|s| pick(s.words()));
            d.words(noun, size)
        };
        let mut words = vec!["the"];
        match self {
            ReferringForm::Plain(d) => words.extend(desc_words(d)),
            ReferringForm::Selected {
                selector,
                description,
            } => {
                words.push(selector.word());
                words.extend(desc_words(description));
            }
            ReferringForm::Related {
                target,
                relation,
                context,
            } => {
                words.extend(desc_words(target));
                words.extend(relation.words());
                words.push("the");
                words.extend(desc_words(context));
            }
        }
        words.join(" ")
    }
}

fn parse_description(tokens: &[String], pos: &mut usize) -> Option<Description> {
    let mut size = None;
    let mut color = None;
    if let Some(s) = tokens.get(*pos).and_then(|t| SizeClass::from_word(t)) {
        size = Some(s);
        *pos += 1;
    }
    if let Some(c) = tokens.get(*pos).and_then(|t| Color::from_word(t)) {
        color = Some(c);
        *pos += 1;
    }
    let category = Category::from_word(tokens.get(*pos)?)?;
    *pos += 1;
    Some(Description {
        size,
        color,
        category,
    })
}

fn parse_relation(tokens: &[String], pos: &mut usize) -> Option<Relation> {
    Relation::ALL.into_iter().find(|r| {
        let words = r.words();
        let ok = tokens.len() >= *pos + words.len()
            && words.iter().zip(&tokens[*pos..]).all(|(w, t)| w == t);
        if ok {
            *pos += words.len();
        }
        ok
    })
}

/// Parses a token sequence in the corpus grammar; `None` if it does not fit.
pub fn parse_tokens(tokens: &[String]) -> Option<ReferringForm> {
    if tokens.first().map(String::as_str) != Some("the") {
        return None;
    }
    let mut pos = 1;
    let selector = tokens
        .get(pos)
        .and_then(|t| Selector::ALL.into_iter().find(|s| s.word() == t));
    if selector.is_some() {
        pos += 1;
    }
    let description = parse_description(tokens, &mut pos)?;
    let form = if pos == tokens.len() {
        match selector {
            Some(selector) => ReferringForm::Selected {
                selector,
                description,
            },
            None => ReferringForm::Plain(description),
        }
    } else {
        if selector.is_some() {
            return None;
        }
        let relation = parse_relation(tokens, &mut pos)?;
        if tokens.get(pos).map(String::as_str) != Some("the") {
            return None;
        }
        pos += 1;
        let context = parse_description(tokens, &mut pos)?;
        if pos != tokens.len() {
            return None;
        }
        ReferringForm::Related {
            target: description,
            relation,
            context,
        }
    };
    Some(form)
}

pub fn parse(text: &str) -> Option<ReferringForm> {
    parse_tokens(&tokenize(text))
}

fn matching(scene: &Scene, d: &Description) -> Vec<usize> {
    (0..scene.objects.len())
        .filter(|&i| d.matches(&scene.objects[i]))
        .collect()
}

/// Picks the member of `group` whose centre is strictly extreme by at least
/// the selector margin. `better(a, b)` is true when centre `a` beats `b`.
fn extreme(scene: &Scene, group: &[usize], better: impl Fn(f64, f64) -> bool) -> Vec<usize> {
    let margin = SELECTOR_MARGIN * scene.width as f64;
    let cx = |i: usize| scene.objects[i].bbox.center().0;
    group
        .iter()
        .copied()
        .filter(|&i| {
            group
                .iter()
                .all(|&j| j == i || (better(cx(i), cx(j)) && (cx(i) - cx(j)).abs() >= margin))
        })
        .collect()
}

/// Context objects for a parsed expression: the unique object named by a
/// relational context, or the peer object for a two-way left/right
/// selection. `None` means the whole image is the context.
pub fn context_object(scene: &Scene, form: &ReferringForm, target: usize) -> Option<usize> {
    match form {
        ReferringForm::Plain(_) => None,
        ReferringForm::Selected {
            selector: Selector::Left | Selector::Right,
            description,
        } => {
            let group = matching(scene, description);
            (group.len() == 2).then(|| group.into_iter().find(|&i| i != target))?
        }
        ReferringForm::Selected { .. } => None,
        ReferringForm::Related { context, .. } => {
            let ctx = matching(scene, context);
            (ctx.len() == 1).then_some(ctx[0])
        }
    }
}

/// All objects that satisfy `form` in `scene`.
pub fn resolve(scene: &Scene, form: &ReferringForm) -> Vec<usize> {
    match form {
        ReferringForm::Plain(d) => matching(scene, d),
        ReferringForm::Selected {
            selector,
            description,
        } => {
            let group = matching(scene, description);
            let lt = |a: f64, b: f64| a < b;
            let gt = |a: f64, b: f64| a > b;
            match selector {
                Selector::Left if group.len() == 2 => extreme(scene, &group, lt),
                Selector::Right if group.len() == 2 => extreme(scene, &group, gt),
                Selector::Leftmost if group.len() >= 3 => extreme(scene, &group, lt),
                Selector::Rightmost if group.len() >= 3 => extreme(scene, &group, gt),
                Selector::Middle if group.len() == 3 => {
                    let left = extreme(scene, &group, lt);
                    let right = extreme(scene, &group, gt);
                    if left.len() != 1 || right.len() != 1 {
                        return Vec::new();
                    }
                    let mid: Vec<usize> = group
                        .iter()
                        .copied()
                        .filter(|i| *i != left[0] && *i != right[0])
                        .collect();
                    let margin = SELECTOR_MARGIN * scene.width as f64;
                    let cx = |i: usize| scene.objects[i].bbox.center().0;
                    mid.into_iter()
                        .filter(|&m| {
                            cx(m) - cx(left[0]) >= margin && cx(right[0]) - cx(m) >= margin
                        })
                        .collect()
                }
                _ => Vec::new(),
            }
        }
        ReferringForm::Related {
            target,
            relation,
            context,
        } => {
            let ctx = matching(scene, context);
            if ctx.len() != 1 {
                return Vec::new();
            }
            let c = ctx[0];
            let cbox = scene.objects[c].bbox;
            matching(scene, target)
                .into_iter()
                .filter(|&i| {
                    i != c && relation.holds(&scene.objects[i].bbox, &cbox, scene.width as f64)
                })
                .collect()
        }
    }
}

/// Resolves raw expression text; `None` if the text is outside the grammar.
pub fn resolve_text(scene: &Scene, text: &str) -> Option<Vec<usize>> {
    parse(text).map(|f| resolve(scene, &f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuation::ObjectExtent;
    use crate::scene::SceneObject;

    fn obj(id: &str, category: Category, color: Color, b: [f64; 4]) -> SceneObject {
        SceneObject {
            id: id.into(),
            category,
            color,
            size_class: SizeClass::Small,
            bbox: BoundingBox::try_from(b).unwrap(),
            extent: ObjectExtent::new(0.05, 0.1, 0.05).unwrap(),
        }
    }

    fn two_bottles() -> Scene {
        Scene {
            id: "t".into(),
            width: 640,
            height: 480,
            objects: vec![
                obj("o0", Category::Bottle, Color::Blue, [300.0, 100.0, 340.0, 200.0]),
                obj("o1", Category::Bottle, Color::Blue, [100.0, 100.0, 140.0, 200.0]),
                obj("o2", Category::Cup, Color::Red, [350.0, 210.0, 400.0, 260.0]),
            ],
        }
    }

    #[test]
    fn parses_every_form() {
        assert!(matches!(parse("the red cup"), Some(ReferringForm::Plain(_))));
        assert!(matches!(
            parse("the left blue bottle"),
            Some(ReferringForm::Selected {
                selector: Selector::Left,
                ..
            })
        ));
        assert!(matches!(
            parse("the small flask left of the red mug"),
            Some(ReferringForm::Related {
                relation: Relation::LeftOf,
                ..
            })
        ));
        assert!(parse("the top left").is_none());
        assert!(parse("red cup").is_none());
        assert!(parse("the leftmost cup next to the box").is_none());
    }

    #[test]
    fn left_selector_picks_smaller_x() {
        let scene = two_bottles();
        assert_eq!(resolve_text(&scene, "the left blue bottle"), Some(vec![1]));
        assert_eq!(resolve_text(&scene, "the right blue bottle"), Some(vec![0]));
        assert_eq!(resolve_text(&scene, "the red cup"), Some(vec![2]));
        // Two bottles are not enough for "leftmost".
        assert_eq!(resolve_text(&scene, "the leftmost blue bottle"), Some(vec![]));
    }

    #[test]
    fn relational_resolution() {
        let scene = two_bottles();
        assert_eq!(resolve_text(&scene, "the bottle above the red cup"), Some(vec![0, 1]));
        assert_eq!(resolve_text(&scene, "the bottle next to the cup"), Some(vec![0]));
        let form = parse("the bottle next to the cup").unwrap();
        assert_eq!(context_object(&scene, &form, 0), Some(2));
        let form = parse("the left bottle").unwrap();
        assert_eq!(context_object(&scene, &form, 1), Some(0));
    }

    #[test]
    fn realize_round_trips_through_parse() {
        let form = ReferringForm::Related {
            target: Description {
                size: Some(SizeClass::Large),
                color: Some(Color::Green),
                category: Category::Glass,
            },
            relation: Relation::NextTo,
            context: Description {
                size: None,
                color: None,
                category: Category::Book,
            },
        };
        assert_eq!(form.text(), "the large green glass next to the book");
        assert_eq!(parse(&form.text()), Some(form));
        let mut second = |w: &'static [&'static str]| w[w.len() - 1];
        assert_eq!(parse(&form.realize(&mut second)), Some(form));
    }
}
