//! Density against hand-counted components.

use mathdeid_core::segmentation::{math_density, MathVocabulary};

use crate::Outcome;

/// (text, tokens, word hits, phrase hits, pattern hits), counted by hand
/// against the shipped vocabulary.
const FIXTURES: &[(&str, usize, usize, usize, usize)] = &[
    ("hello there, how are you", 5, 0, 0, 0),
    ("so the slope is 2 and the intercept is 3", 10, 2, 0, 0),
    ("we need the least common multiple here", 7, 2, 1, 0),
    ("", 0, 0, 0, 0),
    ("What is the area of the circle?", 7, 2, 0, 0),
    ("Find the greatest common factor of 12 and 18.", 9, 3, 1, 0),
    // arithmetic: "x + 3"
    ("x + 3 = 7", 5, 0, 0, 1),
    // arithmetic "2x = 10", coefficient "2x"
    ("2x = 10", 3, 0, 0, 2),
    // probability "P(A|B)", decimal "0.25"
    ("The probability P(A|B) is 0.25", 5, 1, 0, 2),
    // coordinates "(3, 4)"
    ("Plot the point (3, 4) on the coordinate plane", 9, 3, 1, 1),
    ("I got 3/4 of the pizza", 6, 0, 0, 0),
    // fractions "x/2" and "1/n", arithmetic "x/2"
    ("Is x/2 bigger than 1/n?", 5, 0, 0, 3),
    // exponent "y^2"
    ("y^2 + 3", 3, 0, 0, 1),
    // function "f(x)"
    ("f(x) equals 10", 3, 1, 0, 1),
    // inequality "x < 5"
    ("if x < 5 then", 5, 0, 0, 1),
    ("The answer is 3.14", 4, 1, 0, 1),
    // indexed "x1", "x2"
    ("Use x1 and x2 here", 5, 0, 0, 2),
    // coefficient "3x"
    ("Solve 3x for x", 4, 1, 0, 1),
    ("What is the square root of 49?", 7, 2, 1, 0),
    // "greater than" and "greater than or equal" both count
    ("Is 7 greater than or equal to 5?", 8, 1, 2, 0),
    ("Mean, median, and mode!", 4, 3, 0, 0),
    ("SLOPE Intercept", 2, 2, 0, 0),
    // "..." trims to an empty token that still counts
    ("slope ... intercept", 3, 2, 0, 0),
    ("The tax and the tip", 5, 2, 0, 0),
    ("We got 5 apples.", 4, 0, 0, 0),
    ("Use the Pythagorean theorem", 4, 2, 1, 0),
    ("slope slope slope", 3, 3, 0, 0),
    // function "P(a)"; the probability family is case-sensitive
    ("P(a) is lowercase", 3, 0, 0, 1),
    // coordinates "(1,3)"
    ("(1,3) is our point", 4, 0, 0, 1),
    ("the ratio is 3:4 and the rate is 12.5 percent", 10, 3, 0, 1),
    ("x^2 and y^2", 3, 0, 0, 2),
    // inequality and arithmetic both match "a = b"
    ("a = b", 3, 0, 0, 2),
    ("   ", 0, 0, 0, 0),
];

fn oracle(tokens: usize, words: usize, phrases: usize, patterns: usize) -> f64 {
    if tokens == 0 {
        return 0.0;
    }
    (words as f64 + 1.5 * phrases as f64 + 2.0 * patterns as f64) / tokens as f64
}

pub fn run() -> Outcome {
    let vocab = MathVocabulary::reference();
    for &(text, tokens, words, phrases, patterns) in FIXTURES {
        let d = math_density(text, &vocab);
        ensure!(
            (d.token_count, d.word_hits, d.phrase_hits, d.pattern_hits) == (tokens, words, phrases, patterns),
            "{text:?}: components {:?} != expected {:?}",
            (d.token_count, d.word_hits, d.phrase_hits, d.pattern_hits),
            (tokens, words, phrases, patterns)
        );
        let expected = oracle(tokens, words, phrases, patterns);
        ensure!(
            (d.value - expected).abs() <= 1e-9,
            "{text:?}: value {} != oracle {expected}",
            d.value
        );
    }
    let worked = [
        ("so the slope is 2 and the intercept is 3", 0.2),
        ("we need the least common multiple here", 0.5),
    ];
    for (text, value) in worked {
        let d = math_density(text, &vocab);
        ensure!((d.value - value).abs() <= 1e-9, "{text:?}: {} != {value}", d.value);
    }
    Ok(format!("{} fixtures match within 1e-9", FIXTURES.len()))
}
