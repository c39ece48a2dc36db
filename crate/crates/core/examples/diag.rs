use riskfed::ingest::{synth_generate, Modality, SynthProfile};
use riskfed::pipeline::*;

fn main() {
    for (synth_seed, pipe_seed) in [(20240901u64, 7u64), (1, 2), (99, 5), (777, 123), (5, 5)] {
        let data = synth_generate(&SynthProfile {
            modality: Modality::Mouse, users: 20, sessions_per_user: 30,
            anomaly_fraction: 0.1, seed: synth_seed,
        }).unwrap();
        let dataset = IngestedDataset { records: data.records, truth: Some(data.truth) };
        let cfg = PipelineConfig::new(Modality::Mouse, pipe_seed);
        match run_pipeline(&dataset, &cfg) {
            Ok(o) => {
                let high = o.metrics.class_metrics("high").unwrap();
                println!("mouse seeds ({synth_seed},{pipe_seed}): recall {:.3} precision {:.3}", high.recall, high.precision);
            }
            Err(e) => println!("mouse seeds ({synth_seed},{pipe_seed}): ERROR {e}"),
        }
    }
}
