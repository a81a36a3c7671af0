//! Synthetic receipts shared by the integration tests.
#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use receipt_ner::corpus::{Corpus, NECategory, ReceiptRecord, Split, Truth};

const KATAKANA: &[char] = &[
    'ア', 'イ', 'カ', 'キ', 'サ', 'シ', 'タ', 'ナ', 'マ', 'ミ', 'ラ', 'リ', 'ン', 'ー', 'ト', 'ル',
];
const KANJI: &[char] = &[
    '東', '京', '都', '港', '区', '麻', '布', '番', '町', '市', '県', '群', '馬', '高', '崎', '栄',
];
const HIRAGANA: &[char] = &[
    'あ', 'い', 'う', 'お', 'か', 'さ', 'た', 'な', 'は', 'ま', 'や', 'ら', 'ん',
];
const FILLER: &[char] = &[
    'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'k', 'm', 'p', 'r', 's', 't', 'x', 'z', ' ', ' ', '\n',
];

fn word(rng: &mut ChaCha8Rng, pool: &[char], min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| *pool.choose(rng).unwrap()).collect()
}

fn digits(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .map(|_| char::from(b'0' + rng.random_range(0..10u8)))
        .collect()
}

/// Surface form for `cat`. Each category draws from its own character set,
/// so no form can occur inside another form or the filler.
pub fn entity(rng: &mut ChaCha8Rng, cat: NECategory) -> String {
    match cat {
        NECategory::ShopName => word(rng, KATAKANA, 3, 8),
        NECategory::Address => {
            let head = word(rng, KANJI, 3, 7);
            let tail = word(rng, KANJI, 1, 3);
            if rng.random_bool(0.4) {
                format!("{head} {tail}")
            } else {
                format!("{head}{tail}")
            }
        }
        NECategory::Item1 => {
            let w = word(rng, HIRAGANA, 2, 6);
            if rng.random_bool(0.3) {
                format!("{w} {}", word(rng, HIRAGANA, 1, 3))
            } else {
                w
            }
        }
        NECategory::Telephone => {
            format!("0{}-{}-{}", digits(rng, 2), digits(rng, 4), digits(rng, 4))
        }
        NECategory::Date => {
            let sep = if rng.random_bool(0.5) { " " } else { "" };
            format!(
                "20{}年{sep}{}月{}日",
                digits(rng, 2),
                rng.random_range(1..=12),
                rng.random_range(1..=28)
            )
        }
        NECategory::Total => format!("¥{},{}", rng.random_range(1..=99), digits(rng, 3)),
    }
}

fn filler(rng: &mut ChaCha8Rng, max: usize) -> String {
    // Always starts with a letter so entities never touch.
    let first = *FILLER[..16].choose(rng).unwrap();
    let mut s = String::from(first);
    s.push_str(&word(rng, FILLER, 0, max));
    s
}

/// One receipt with each category present with probability 0.8, entities in
/// random order, separated by filler. `max_filler` controls length.
pub fn receipt(rng: &mut ChaCha8Rng, id: &str, max_filler: usize) -> ReceiptRecord {
    let mut cats: Vec<NECategory> = NECategory::ALL
        .into_iter()
        .filter(|_| rng.random_bool(0.8))
        .collect();
    for i in (1..cats.len()).rev() {
        let j = rng.random_range(0..=i);
        cats.swap(i, j);
    }
    let mut truth = Truth::new();
    let mut text = filler(rng, max_filler);
    for cat in cats {
        let form = entity(rng, cat);
        text.push_str(&form);
        text.push_str(&filler(rng, max_filler));
        truth.set(cat, vec![form]);
    }
    ReceiptRecord::new(id, text, truth)
}

pub fn corpus(rng: &mut ChaCha8Rng, split: Split, n: usize, max_filler: usize) -> Corpus {
    let records = (0..n)
        .map(|i| receipt(rng, &format!("{split}-{i:04}"), max_filler))
        .collect();
    Corpus::new(split, records)
}
