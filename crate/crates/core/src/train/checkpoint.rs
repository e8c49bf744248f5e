//! Binary checkpoints of a [`Trainer`].
//!
//! Layout (little-endian, framed by the shared codec with magic `MCGANCKP`):
//! config TOML, step, elapsed ms, last critic loss, window maxima, sample
//! counters, the three parameter groups, the three RMSProp caches, the five
//! random stream positions and the trace so far.

use std::path::Path;

use super::config::TrainConfig;
use super::engine::{Models, SampleCounters, TrainRecord, TrainTrace, Trainer, Window};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::optim::RmsPropState;
use crate::params::ParamStore;
use crate::rng::StreamState;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MCGANCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

fn write_cache(w: &mut Writer, s: &RmsPropState) {
    w.u64(s.cache.len() as u64);
    for t in &s.cache {
        w.tensor(t);
    }
}

fn read_cache(r: &mut Reader<'_>, params: &ParamStore, cfg: &TrainConfig) -> Result<RmsPropState> {
    let n = r.u64()? as usize;
    if n != params.len() {
        return Err(Error::Format(format!("optimizer cache has {n} tensors, parameters have {}", params.len())));
    }
    let cache = (0..n).map(|_| r.tensor()).collect::<Result<Vec<Tensor>>>()?;
    RmsPropState::from_cache(params, cache, cfg.rms_alpha, cfg.rms_eps)
}

impl Trainer {
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, CHECKPOINT_VERSION);
        w.str(&self.config.to_toml());
        w.u64(self.step);
        w.f64(self.elapsed_ms);
        w.f64(self.last_loss);
        w.f64(self.window.stiefel_dev);
        w.f64(self.window.omega_max);
        w.u64(self.counters.critic_real);
        w.u64(self.counters.critic_labeled);
        w.u64(self.counters.generator_real);
        self.models.phi.params.encode_into(&mut w);
        self.models.generator.params.encode_into(&mut w);
        self.models.heads.encode_into(&mut w);
        write_cache(&mut w, &self.opt_phi);
        write_cache(&mut w, &self.opt_gen);
        write_cache(&mut w, &self.opt_heads);
        for rng in self.streams.all() {
            let st = StreamState::capture(self.config.seed, rng);
            w.u64(st.stream);
            w.u128(st.word_pos);
        }
        let recs = self.trace.records();
        w.u64(recs.len() as u64);
        for r in recs {
            w.u64(r.iter);
            for x in [r.loss, r.wall_ms, r.grad_norm, r.param_norm, r.stiefel_dev, r.omega_max] {
                w.f64(x);
            }
        }
        w.finish()
    }

    /// Rebuilds a trainer; nothing is returned unless the whole file
    /// verifies.
    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, CHECKPOINT_VERSION)?;
        let config = TrainConfig::from_toml(&r.str()?)?;
        let step = r.u64()?;
        let elapsed_ms = r.f64()?;
        let last_loss = r.f64()?;
        let window = Window { stiefel_dev: r.f64()?, omega_max: r.f64()? };
        let counters = SampleCounters { critic_real: r.u64()?, critic_labeled: r.u64()?, generator_real: r.u64()? };
        let phi_params = ParamStore::decode_from(&mut r)?;
        let gen_params = ParamStore::decode_from(&mut r)?;
        let heads = ParamStore::decode_from(&mut r)?;

        let spec = config.mixture_spec()?;
        let mut models = Models::init(&config, &spec)?;
        models.phi.params = phi_params;
        models.generator.params = gen_params;
        models.heads = heads;
        let mut t = Trainer::with_models(config, models)
            .map_err(|e| Error::Format(format!("checkpoint does not match its config: {e}")))?;

        t.opt_phi = read_cache(&mut r, &t.models.phi.params, &t.config)?;
        t.opt_gen = read_cache(&mut r, &t.models.generator.params, &t.config)?;
        t.opt_heads = read_cache(&mut r, &t.models.heads, &t.config)?;
        let seed = t.config.seed;
        for rng in t.streams.all_mut() {
            let st = StreamState { seed, stream: r.u64()?, word_pos: r.u128()? };
            *rng = st.restore();
        }
        let n = r.u64()? as usize;
        let mut trace = TrainTrace::new();
        for _ in 0..n {
            let iter = r.u64()?;
            let mut f = [0.0; 6];
            for x in &mut f {
                *x = r.f64()?;
            }
            trace
                .push(TrainRecord {
                    iter,
                    loss: f[0],
                    wall_ms: f[1],
                    grad_norm: f[2],
                    param_norm: f[3],
                    stiefel_dev: f[4],
                    omega_max: f[5],
                })
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        r.finish()?;
        t.step = step;
        t.elapsed_ms = elapsed_ms;
        t.last_loss = last_loss;
        t.window = window;
        t.counters = counters;
        t.trace = trace;
        Ok(t)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn resume(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}
