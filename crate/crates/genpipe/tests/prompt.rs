mod common;

use aura_genpipe::{assemble_prompt, GenError, PromptTemplate};
use common::*;

#[test]
fn prompt_names_both_objects_and_their_relation() {
    let bundle = bundle_of(&two_objects());
    assert_eq!(bundle.relations.len(), 1);
    let prompt = assemble_prompt(&bundle, &PromptTemplate::builtin()).unwrap();
    assert!(prompt.contains("red ellipse"));
    assert!(prompt.contains("blue rectangle"));
    assert!(prompt.contains("The red ellipse <obj0> is in front of the blue rectangle <obj1>"));
    assert!(prompt.contains("exactly 10"));
    assert!(prompt.contains("\"qa_pairs\""));
    assert!(!prompt.contains("{num_pairs}"));
}

#[test]
fn prompt_is_a_pure_function_of_its_inputs() {
    let bundle = bundle_of(&two_objects());
    let t = PromptTemplate::builtin();
    assert_eq!(assemble_prompt(&bundle, &t).unwrap(), assemble_prompt(&bundle, &t).unwrap());
}

#[test]
fn missing_section_is_named() {
    let bundle = bundle_of(&two_objects());
    let mut t = PromptTemplate::builtin();
    t.example = None;
    match assemble_prompt(&bundle, &t) {
        Err(GenError::MissingSection { section }) => assert_eq!(section, "example"),
        other => panic!("expected a missing-section error, got {other:?}"),
    }
    let parsed = PromptTemplate::from_toml_str("task = \"x\"").unwrap();
    assert!(matches!(
        assemble_prompt(&bundle, &parsed),
        Err(GenError::MissingSection { section }) if section == "guidelines"
    ));
    assert!(PromptTemplate::from_toml_str("unknown = 1").is_err());
}

#[test]
fn invalid_bundles_are_refused() {
    let mut bundle = bundle_of(&two_objects());
    let mut empty = bundle.clone();
    empty.objects.clear();
    empty.relations.clear();
    assert!(matches!(
        assemble_prompt(&empty, &PromptTemplate::builtin()),
        Err(GenError::Assembly(_))
    ));
    bundle.relations[0].occludee = "obj9".into();
    assert!(matches!(
        assemble_prompt(&bundle, &PromptTemplate::builtin()),
        Err(GenError::Bundle(_))
    ));
}
