//! Plane painted with strongly colored cells. Local color normalization
//! divides each derivative channel by the local mean color before
//! classifying stripe transitions; without it, saturated albedo tilts every
//! signature toward the dominant channel.

use mpsl::decode::decode_accuracy;
use mpsl::pipeline::run_experiment;
use mpsl::scenarios;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (label, radius) in [("normalized", Some(8)), ("raw", None)] {
        let mut cfg = scenarios::color_panel();
        cfg.pipeline.decode.params.normalize_radius = radius;
        let exp = cfg.build(None)?;
        let (caps, recon, _) = run_experiment(&exp)?;
        let truth = &caps[0].truth;
        // Derivatives straddling a cell edge mix two albedos.
        let edges = truth.albedo_edges(3);
        let border = exp.config.pipeline.decode.params.border;
        for p in recon.pairs() {
            let st = decode_accuracy(&p.decoded, &truth.stripe[p.projector], Some(&edges), border);
            println!(
                "{label:>10}, projector {}: accuracy {:.4}, coverage {:.3} away from albedo edges",
                p.projector, st.accuracy, st.coverage
            );
        }
    }
    Ok(())
}
