//! Each pattern family against hand-judged positive and negative strings.

use mathdeid_core::segmentation::{MathVocabulary, PATTERN_FAMILIES};

use crate::Outcome;

/// (family, should match, should not match)
const CASES: [(&str, [&str; 3], [&str; 3]); 10] = [
    (
        "arithmetic_variables",
        ["x + 3", "2x=10", "y - 4"],
        ["5 + 3", "hello there", "is 5 - 3 ok"],
    ),
    ("coefficients", ["3x", "solve 12a now", "2.5y"], ["34", "x3", "3xy"]),
    ("exponents", ["x^2", "10^-3", "2^0.5"], ["x^y", "^2", "x ^ 2"]),
    ("functions", ["f(x)", "g (2)", "h( )"], ["sin(x)", "f[x]", "(x)"]),
    (
        "inequalities",
        ["x < 5", "y>=2", "a = b"],
        ["5 < 6", "ab < 3", "hello <3"],
    ),
    ("fractions", ["x/2", "1/n", "a/b"], ["3/4", "/x", "12/25/2020"]),
    (
        "coordinates",
        ["(3, 4)", "(-1.5,2)", "( 0 , 0 )"],
        ["(a, b)", "(3 4)", "(3, 4"],
    ),
    ("indexed_vars", ["x1", "abc9", "y_"], ["x_1", "x10", "10x"]),
    ("probability", ["P(A)", "P(A|B)", "P ( B )"], ["p(a)", "P(a)", "P(AB)"]),
    ("decimals", ["0.34", "3.14", "12.5"], ["34", ".5", "5."]),
];

pub fn run() -> Outcome {
    let vocab = MathVocabulary::reference();
    let patterns = vocab.patterns();
    ensure!(patterns.len() == 10, "{} patterns shipped, expected 10", patterns.len());
    let mut checked = 0;
    for (i, (family, positives, negatives)) in CASES.iter().enumerate() {
        ensure!(
            PATTERN_FAMILIES[i] == *family,
            "family {i} is {}, expected {family}",
            PATTERN_FAMILIES[i]
        );
        let re = &patterns[i].regex;
        for s in positives {
            ensure!(re.is_match(s), "{family}: expected a match in {s:?}");
            checked += 1;
        }
        for s in negatives {
            ensure!(!re.is_match(s), "{family}: unexpected match in {s:?}");
            checked += 1;
        }
    }
    Ok(format!("{checked} strings across 10 families agree"))
}
