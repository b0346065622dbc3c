//! Generates the 198-stripe color pattern, checks that every window of seven
//! stripes is unique and looks windows up from colors and transition codes.

use std::collections::HashSet;
use std::time::Instant;

use mpsl::pattern::{build_code_table, count_subpatterns, generate_pattern, SecondOrderCode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let t = Instant::now();
    let p = generate_pattern(7, 3)?;
    println!(
        "k = 7: {} stripes, {} windows, {} possible ({:.1?})",
        p.len(),
        p.num_windows(),
        count_subpatterns(7, 3)?,
        t.elapsed()
    );

    let text = p.to_text();
    println!("first 40 stripes: {}", &text[..40]);

    let windows: HashSet<_> = (0..p.num_windows()).map(|i| p.window_at(i).to_vec()).collect();
    let repeats = p.stripes().windows(2).filter(|w| w[0] == w[1]).count();
    println!("unique windows: {}, adjacent repeats: {repeats}", windows.len());

    let i = 123;
    println!("window {i} by colors -> {:?}", p.window_lookup(p.window_at(i))?);

    let first = build_code_table(&p, 1)?;
    let codes = p.transitions();
    let window = &codes[i..i + first.window_length()];
    let names: Vec<_> = window.iter().map(|c| c.name()).collect();
    println!("window {i} by transitions {names:?} -> {:?}", first.lookup_transitions(window));

    let second = build_code_table(&p, 2)?;
    let centers: Vec<SecondOrderCode> = codes
        .windows(2)
        .skip(i)
        .take(second.window_length())
        .map(|w| SecondOrderCode::from_transitions(w[0], w[1]).expect("adjacent transitions share a stripe"))
        .collect();
    println!("window {i} by stripe-center codes -> {:?}", second.lookup_second_order(&centers));

    for k in 2..=5 {
        let q = generate_pattern(k, 3)?;
        println!("k = {k}: {} stripes, {}", q.len(), q.to_text());
    }
    Ok(())
}
