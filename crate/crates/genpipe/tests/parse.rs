mod common;

use aura_core::Conversation;
use aura_genpipe::parse::{parse_qa, render_qa, tag_answer, untag_answer, ItemProblem};
use aura_genpipe::GenError;
use common::*;
use proptest::prelude::*;

#[test]
fn valid_ten_pair_response_parses_cleanly() {
    let sample = two_objects();
    let items = valid_items(&sample, 10);
    let parsed = parse_qa(&render_qa(&items), &bundle_of(&sample)).unwrap();
    assert!(parsed.is_clean(), "{:?}", parsed.errors);
    assert_eq!(parsed.conversations(), items);
}

#[test]
fn nine_pairs_is_a_count_violation_with_nine_items() {
    let sample = two_objects();
    let parsed = parse_qa(&render_qa(&valid_items(&sample, 9)), &bundle_of(&sample)).unwrap();
    assert_eq!(parsed.items.len(), 9);
    assert_eq!(parsed.errors.len(), 1);
    assert_eq!(parsed.errors[0].index, None);
    assert_eq!(parsed.errors[0].problem, ItemProblem::Count { expected: 10, found: 9 });
}

#[test]
fn unknown_object_flags_only_that_item() {
    let sample = two_objects();
    let mut items = valid_items(&sample, 10);
    items[4].target_ids = vec!["obj7".into()];
    let parsed = parse_qa(&render_qa(&items), &bundle_of(&sample)).unwrap();
    assert_eq!(parsed.items.len(), 10);
    assert_eq!(parsed.errors.len(), 1);
    assert_eq!(parsed.errors[0].index, Some(4));
    assert_eq!(parsed.errors[0].problem, ItemProblem::UnknownObject { id: "obj7".into() });
}

#[test]
fn envelope_problems_and_per_item_problems() {
    let bundle = bundle_of(&two_objects());
    assert!(matches!(parse_qa("I cannot help with that.", &bundle), Err(GenError::Envelope(_))));
    assert!(matches!(parse_qa("{\"pairs\": []}", &bundle), Err(GenError::Envelope(_))));
    assert!(matches!(parse_qa("{\"qa_pairs\": [", &bundle), Err(GenError::Envelope(_))));

    let fenced = format!("Sure!\n```json\n{}\n```\n", render_qa(&valid_items(&two_objects(), 10)));
    assert!(parse_qa(&fenced, &bundle).unwrap().is_clean());

    let raw = r#"{"qa_pairs": [
        {"question": "Which?", "answer": "This [SEG] one <obj0>."},
        {"question": "", "answer": "Nothing here."},
        {"question": 3}
    ]}"#;
    let parsed = parse_qa(raw, &bundle).unwrap();
    let problems: Vec<_> = parsed.errors.iter().map(|e| (e.index, e.problem.clone())).collect();
    assert!(problems.contains(&(Some(0), ItemProblem::StraySeg)));
    assert!(problems.contains(&(Some(1), ItemProblem::EmptyQuestion)));
    assert!(problems.contains(&(Some(1), ItemProblem::NoTargets)));
    assert!(matches!(problems.iter().find(|p| p.0 == Some(2)), Some((_, ItemProblem::Malformed { .. }))));
    assert_eq!(parsed.items.len(), 2);
}

#[test]
fn tags_convert_to_markers_in_order() {
    let (answer, ids) = untag_answer("The <obj1> is behind the <obj0>, not <b>here</b> or < obj2 >.");
    assert_eq!(answer, "The [SEG] is behind the [SEG], not [SEG]here</b> or < obj2 >.");
    assert_eq!(ids, ["obj1", "obj0", "b"]);
    assert_eq!(tag_answer("A [SEG] and [SEG].", &["x".into(), "y".into()]), "A <x> and <y>.");
}

fn arb_items() -> impl Strategy<Value = Vec<Conversation>> {
    let word = "[a-z]{1,8}";
    let item = (
        prop::collection::vec(word, 1..6),
        prop::collection::vec((word, 0usize..2), 1..4),
        ".?",
    )
        .prop_map(|(q, parts, end)| {
            let mut answer = String::new();
            let mut target_ids = Vec::new();
            for (w, obj) in parts {
                answer.push_str(&w);
                answer.push_str(" [SEG] ");
                target_ids.push(format!("obj{obj}"));
            }
            answer.push_str(&end);
            Conversation {
                question: q.join(" ") + "?",
                answer,
                target_ids,
            }
        });
    prop::collection::vec(item, 10..=10)
}

proptest! {
    #[test]
    fn render_then_parse_is_identity(items in arb_items()) {
        let bundle = bundle_of(&two_objects());
        let parsed = parse_qa(&render_qa(&items), &bundle).unwrap();
        prop_assert!(parsed.is_clean(), "{:?}", parsed.errors);
        prop_assert_eq!(parsed.conversations(), items);
    }
}
