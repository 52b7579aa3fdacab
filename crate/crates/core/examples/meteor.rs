//! Scores a few caption pairs with METEOR and BLEU and shows the alignment.

use bmhrl::metrics::{align, bleu_n, meteor_score, porter_stem, tokenize, MeteorParams};

fn main() {
    let params = MeteorParams::default();
    let pairs = [
        ("a man plays the guitar", "a man plays the guitar"),
        ("a man the plays guitar", "a man plays the guitar"),
        ("the men played guitars", "a man plays the guitar"),
        ("a dog runs", "a man plays the guitar"),
    ];
    for (hyp, reference) in pairs {
        let h = tokenize(hyp);
        let r = tokenize(reference);
        let s = meteor_score(&h, &r, &params);
        let a = align(&h, &r, &params);
        println!("{hyp:?} vs {reference:?}");
        println!(
            "  meteor {:.4} (P {:.3} R {:.3} F {:.3} penalty {:.4}), {} matches in {} chunks",
            s.value, s.precision, s.recall, s.fmean, s.penalty, a.matches, a.chunks
        );
        for n in 1..=4 {
            print!("  bleu{n} {:.4}", bleu_n(&h, &r, n).unwrap());
        }
        println!();
    }
    for w in ["playing", "guitars", "relational", "caresses"] {
        println!("stem({w}) = {}", porter_stem(w));
    }
}
