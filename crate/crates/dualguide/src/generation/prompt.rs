//! Prompt construction from class names.

use crate::error::{Error, Result};

pub const DEFAULT_TEMPLATE: &str = "A photo of a {}";

/// Commonly used per-dataset prompt formulations. The default template is
/// used for anything not listed; all of these can be overridden in config.
const TEMPLATE_TABLE: &[(&str, &str)] = &[
    ("aircraft", "A photo of a {}, a type of aircraft."),
    ("caltech101", "A photo of a {}."),
    ("cars", "A photo of a {}."),
    ("dtd", "A photo of a {} texture."),
    ("eurosat", "A centered satellite photo of {}."),
    ("flowers102", "A photo of a {}, a type of flower."),
    ("food101", "A photo of {}, a type of food."),
    ("imagenet", "A photo of a {}."),
    ("pets", "A photo of a {}, a type of pet."),
    ("sun397", "A photo of a {}."),
];

/// Template for a known dataset kind, if any.
pub fn builtin_template(dataset_kind: &str) -> Option<&'static str> {
    TEMPLATE_TABLE
        .iter()
        .find(|(k, _)| *k == dataset_kind)
        .map(|(_, t)| *t)
}

/// Substitute the class name into the template's single `{}` placeholder.
/// Underscores in the class name map to spaces.
pub fn make_prompt(class_name: &str, template: &str) -> Result<String> {
    let placeholders = template.matches("{}").count();
    if placeholders != 1 {
        return Err(Error::invalid(format!(
            "template must contain exactly one {{}} placeholder, found {placeholders}: {template:?}"
        )));
    }
    let name = class_name.replace('_', " ");
    Ok(template.replacen("{}", &name, 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_template_example() {
        assert_eq!(
            make_prompt("British Shorthair", DEFAULT_TEMPLATE).unwrap(),
            "A photo of a British Shorthair"
        );
    }

    #[test]
    fn identity_template() {
        assert_eq!(make_prompt("rose", "{}").unwrap(), "rose");
    }

    #[test]
    fn dataset_specific_template() {
        assert_eq!(
            make_prompt("747-400", "A photo of a {}, a type of aircraft.").unwrap(),
            "A photo of a 747-400, a type of aircraft."
        );
    }

    #[test]
    fn underscores_become_spaces() {
        assert_eq!(
            make_prompt("british_shorthair", DEFAULT_TEMPLATE).unwrap(),
            "A photo of a british shorthair"
        );
    }

    #[test]
    fn missing_placeholder_rejected() {
        assert!(make_prompt("rose", "no placeholder").is_err());
        assert!(make_prompt("rose", "{} and {}").is_err());
    }

    #[test]
    fn builtin_table_lookup() {
        assert_eq!(
            builtin_template("aircraft"),
            Some("A photo of a {}, a type of aircraft.")
        );
        assert!(builtin_template("unknown-benchmark").is_none());
    }
}
