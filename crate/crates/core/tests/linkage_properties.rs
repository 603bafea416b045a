use proptest::prelude::*;
use vinmap_core::linkage::{edit_distance, normalize_label, Dictionary, EditCosts};

fn label() -> impl Strategy<Value = String> {
    "[A-Za-zéèêàçôœ' -]{0,24}"
}

proptest! {
    #[test]
    fn normalization_is_idempotent(raw in label()) {
        let dict = Dictionary::french_default();
        let once = normalize_label(&raw, &dict);
        prop_assert_eq!(normalize_label(&once, &dict), once);
    }

    #[test]
    fn normalized_labels_are_plain_ascii(raw in label()) {
        let n = normalize_label(&raw, &Dictionary::french_default());
        prop_assert!(n.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == ' '));
        prop_assert!(!n.starts_with(' ') && !n.ends_with(' ') && !n.contains("  "));
    }

    #[test]
    fn distance_is_a_metric(a in "[a-d]{0,7}", b in "[a-d]{0,7}", c in "[a-d]{0,7}") {
        let k = EditCosts::default();
        let ab = edit_distance(&a, &b, &k);
        prop_assert_eq!(ab, edit_distance(&b, &a, &k));
        prop_assert_eq!(ab == 0.0, a == b);
        prop_assert!(ab <= edit_distance(&a, &c, &k) + edit_distance(&c, &b, &k));
    }
}

#[test]
fn accents_case_and_stopwords_disappear() {
    let dict = Dictionary::french_default();
    assert_eq!(
        normalize_label("Côtes-du-Rhône", &dict),
        normalize_label("COTES DU RHONE", &dict)
    );
    assert_eq!(normalize_label("Crémant d'Alsace", &dict), "CREMANT ALSACE");
}

#[test]
fn stopwords_and_accents_in_rhone() {
    let dict = Dictionary::french_default();
    assert_eq!(normalize_label("Côte du Rhône", &dict), "COTE RHONE");
    assert_eq!(normalize_label("CDR", &dict), "COTE RHONE");
    assert_eq!(normalize_label("", &dict), "");
}
