use gpgrid::harness::{apply_gaps, gen_rastrigin, gen_wave_membrane, rastrigin_grid, WaveConfig, RASTRIGIN_DOMAIN};
use serde_json::json;

use crate::common::{usage, CliResult};
use crate::{GenerateArgs, GenerateKind};

pub fn run(a: GenerateArgs) -> CliResult<()> {
    let (data, mut meta) = match a.kind {
        GenerateKind::Rastrigin => {
            if a.nt.is_some() {
                return Err(usage("--nt only applies to wave datasets"));
            }
            let data = gen_rastrigin(&rastrigin_grid(a.nx, a.ny)?)?;
            let meta = json!({
                "generator": "rastrigin",
                "nx": a.nx,
                "ny": a.ny,
                "domain": [RASTRIGIN_DOMAIN.0, RASTRIGIN_DOMAIN.1],
            });
            (data, meta)
        }
        GenerateKind::Wave => {
            let nt = a.nt.ok_or_else(|| usage("wave datasets need --nt"))?;
            let cfg = WaveConfig {
                wave_speed: a.wave_speed,
                dt: a.dt,
                smoothing_passes: a.smoothing_passes,
                seed: a.seed,
                ..WaveConfig::new(a.nx, a.ny, nt)
            };
            let data = gen_wave_membrane(&cfg)?;
            let meta = json!({
                "generator": "wave",
                "nx": a.nx,
                "ny": a.ny,
                "nt": nt,
                "wave_speed": a.wave_speed,
                "dt": cfg.resolved_dt(),
                "smoothing_passes": a.smoothing_passes,
                "seed": a.seed,
            });
            (data, meta)
        }
    };
    let data = match a.gappiness {
        Some(g) => {
            meta["gappiness"] = json!(g);
            meta["gap_seed"] = json!(a.seed);
            apply_gaps(&data, g, a.seed)?
        }
        None => data,
    };
    gpgrid::io::save_dataset(&data, &a.out, meta)?;
    println!(
        "wrote {} (M = {}, N = {}, L = {})",
        a.out.display(),
        data.len(),
        data.idx.n_observed(),
        data.idx.n_gaps()
    );
    Ok(())
}
