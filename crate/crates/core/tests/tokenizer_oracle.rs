//! Token ids produced by the reference CLIP tokenizer for the same strings.

use inspect_core::tokenizer::ClipTokenizer;

const CASES: &[(&str, &[u32])] = &[
    ("a photo", &[320, 1125]),
    ("A defective metal component", &[320, 4148, 9313, 4044, 21284]),
    ("A nominal metal component", &[320, 5643, 566, 4044, 21284]),
    ("An industrial part", &[550, 7520, 1551]),
    ("A piece of sheet metal", &[320, 2754, 539, 7298, 4044]),
    ("An artistic photograph", &[550, 12421, 8853]),
    (
        "A metallic pan free of black scuff marks",
        &[320, 17257, 7437, 1139, 539, 1449, 8181, 1304, 5466],
    ),
    (
        "An microstructure image with a low single crystal structure.",
        &[550, 3160, 5285, 2867, 593, 320, 1042, 2688, 6517, 5285, 269],
    ),
    (
        "Hello,   World!! it's 2025",
        &[3306, 267, 1002, 748, 585, 568, 273, 271, 273, 276],
    ),
    ("über-café naïve", &[6522, 1516, 268, 15304, 1097, 35689, 563]),
];

#[test]
fn matches_reference_ids() {
    let tok = ClipTokenizer::bundled().unwrap();
    for (text, want) in CASES {
        assert_eq!(tok.encode(text), *want, "{text:?}");
        let seq = tok.tokenize(text).unwrap();
        assert_eq!(seq.content(), *want);
        assert_eq!(seq.ids()[0], tok.start_of_text());
        assert_eq!(seq.ids()[want.len() + 1], tok.end_of_text());
    }
}

#[test]
fn decode_inverts_encode_up_to_case_and_spacing() {
    let tok = ClipTokenizer::bundled().unwrap();
    for (text, ids) in CASES {
        let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let decoded = tok.decode(ids).unwrap();
        assert_eq!(decoded.replace(' ', ""), normalized.replace(' ', ""), "{text:?}");
    }
}
