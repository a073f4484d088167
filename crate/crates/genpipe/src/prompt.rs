//! Prompt assembly from a sectioned template.

use std::fmt::Write;

use serde::Deserialize;

use crate::bundle::ObjectAnnotationBundle;
use crate::{GenError, Result, QA_PAIRS};

const DEFAULT_TEMPLATE: &str = include_str!("default_template.toml");

/// Sections of a prompt. `{num_pairs}` is substituted everywhere.
#[derive(Clone, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub task: Option<String>,
    pub guidelines: Option<String>,
    pub objects_heading: Option<String>,
    pub relations_heading: Option<String>,
    pub example: Option<String>,
    pub output_format: Option<String>,
}

impl PromptTemplate {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| GenError::Config(format!("prompt template: {e}")))
    }

    pub fn builtin() -> Self {
        Self::from_toml_str(DEFAULT_TEMPLATE).expect("built-in template parses")
    }

    fn required(&self) -> Result<[&str; 6]> {
        Ok([
            section("task", &self.task)?,
            section("guidelines", &self.guidelines)?,
            section("objects_heading", &self.objects_heading)?,
            section("relations_heading", &self.relations_heading)?,
            section("example", &self.example)?,
            section("output_format", &self.output_format)?,
        ])
    }
}

fn section<'a>(name: &str, value: &'a Option<String>) -> Result<&'a str> {
    value
        .as_deref()
        .filter(|s| !s.trim().is_empty())
        .map(str::trim_end)
        .ok_or_else(|| GenError::MissingSection { section: name.into() })
}

fn percent(rate: f64) -> String {
    format!("{:.0}%", rate * 100.0)
}

fn describe_box(b: &aura_core::BoxPx) -> String {
    format!("[{}, {}, {}, {}]", b.x0, b.y0, b.x1, b.y1)
}

/// Deterministic prompt text for `bundle`.
pub fn assemble_prompt(bundle: &ObjectAnnotationBundle, template: &PromptTemplate) -> Result<String> {
    let [task, guidelines, objects_heading, relations_heading, example, output_format] = template.required()?;
    if bundle.objects.is_empty() {
        return Err(GenError::Assembly(format!("sample {} has no annotated objects", bundle.sample_id)));
    }
    bundle.validate()?;

    let mut out = String::new();
    for part in [task, guidelines] {
        out.push_str(part);
        out.push_str("\n\n");
    }
    writeln!(out, "{objects_heading}").unwrap();
    writeln!(out, "Image size: {} x {} pixels.", bundle.width, bundle.height).unwrap();
    for o in &bundle.objects {
        let visible = match &o.visible_box {
            Some(b) => format!("visible box {}", describe_box(b)),
            None => "not visible at all".to_string(),
        };
        writeln!(
            out,
            "- <{}>: a {}; full extent box {}; {}; {} of it is hidden.",
            o.id,
            o.label(),
            describe_box(&o.amodal_box),
            visible,
            percent(o.occlusion_rate)
        )
        .unwrap();
    }
    out.push('\n');
    writeln!(out, "{relations_heading}").unwrap();
    if bundle.relations.is_empty() {
        writeln!(out, "- No object hides any other object.").unwrap();
    }
    for r in &bundle.relations {
        let front = bundle.object(&r.occluder).expect("validated");
        let back = bundle.object(&r.occludee).expect("validated");
        writeln!(
            out,
            "- The {} <{}> is in front of the {} <{}> and hides {} of its pixels.",
            front.label(),
            front.id,
            back.label(),
            back.id,
            r.pixels
        )
        .unwrap();
    }
    out.push('\n');
    for part in [example, output_format] {
        out.push_str(part);
        out.push_str("\n\n");
    }
    let out = out.trim_end().to_string() + "\n";
    Ok(out.replace("{num_pairs}", &QA_PAIRS.to_string()))
}
