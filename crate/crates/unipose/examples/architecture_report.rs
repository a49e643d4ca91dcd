//! Waterfall cascade vs the parallel pyramid, by the numbers.
//!
//! Builds wiring specs for both context modules at the same widths and
//! rates, then prints parameter counts and deepest-path receptive fields.
//! The cascade re-reads its own output at each rate, so its receptive field
//! compounds while the pyramid's stops at the widest single branch.
//!
//! Run: cargo run --release --example architecture_report

use unipose::arch::{analyze, param_count, receptive_field};
use unipose::wasp::{Aspp, Wasp, WaspConfig};

fn main() -> unipose::Result<()> {
    let config = WaspConfig::default();
    println!(
        "context module: {} -> {} per branch -> {} fused, rates {:?}\n",
        config.in_channels, config.branch_channels, config.out_channels, config.rates
    );

    let wasp = analyze(&Wasp::<f32>::module_spec(&config))?;
    let aspp = analyze(&Aspp::<f32>::module_spec(&config))?;
    println!("{wasp}");
    println!("{aspp}");

    let saved = aspp.params - wasp.params;
    println!(
        "\ncascade saves {saved} parameters ({:.1}%) because later stages read",
        100.0 * saved as f64 / aspp.params as f64
    );
    println!("{}-channel maps instead of the {}-channel input", config.branch_channels, config.in_channels);

    // Receptive field growth rate by rate.
    println!("\nreceptive field by stage:");
    let mut rf = 1;
    for &rate in &config.rates {
        rf += 2 * rate;
        println!("  after rate {rate:>2}: {rf:>3} px (cascade)   {:>3} px (lone branch)", 1 + 2 * rate);
    }

    // Smaller widths shrink the counts but never the field of view.
    let tiny = WaspConfig { in_channels: 16, branch_channels: 8, out_channels: 16, ..config };
    let spec = Wasp::<f32>::module_spec(&tiny);
    println!(
        "\ntiny widths (16/8/16): {} params, receptive field still {}",
        param_count(&spec),
        receptive_field(&spec)?
    );

    assert_eq!(wasp.receptive_field, 121);
    assert_eq!(aspp.receptive_field, 49);
    assert!(wasp.params < aspp.params);
    Ok(())
}
