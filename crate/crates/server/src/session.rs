//! Per-environment request handling, independent of the transport.

use std::sync::Arc;

use findview_core::corruptions::{CorruptionKind, CorruptionSpec, Severity};
use findview_core::environment::{
    sample_episode, Difficulty, EnvConfig, EnvError, EpisodeSpec, FindViewEnv, PanoramaSource, SamplerConfig,
    StepResult,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::protocol::{encode_observation, ErrorCode, ErrorReply, Request, SeekReply, StepReply};

/// Where reset draws its episodes from.
#[derive(Debug, Clone)]
pub enum EpisodeSource {
    /// Replays an episode file; cursors wrap around its end.
    File(Arc<Vec<EpisodeSpec>>),
    /// Samples episode `k` from panorama `panos[k % n]` with difficulty
    /// cycling over `difficulties` every `n` episodes.
    Sampler {
        panos: Vec<String>,
        difficulties: Vec<Difficulty>,
        sampler: SamplerConfig,
        corruption: Option<(CorruptionKind, Severity)>,
    },
}

impl EpisodeSource {
    pub fn len(&self) -> Option<usize> {
        match self {
            EpisodeSource::File(v) => Some(v.len()),
            EpisodeSource::Sampler { .. } => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            EpisodeSource::File(v) => v.is_empty(),
            EpisodeSource::Sampler { panos, difficulties, .. } => panos.is_empty() || difficulties.is_empty(),
        }
    }

    /// Episode `index` as drawn by env `env` under global seed `seed`.
    pub fn episode(&self, index: usize, env: usize, seed: u64) -> Result<EpisodeSpec, EnvError> {
        match self {
            EpisodeSource::File(v) => v
                .get(index)
                .cloned()
                .ok_or_else(|| EnvError::InvalidSpec(format!("episode {index} out of range ({} in file)", v.len()))),
            EpisodeSource::Sampler {
                panos,
                difficulties,
                sampler,
                corruption,
            } => {
                let pano = &panos[index % panos.len()];
                let difficulty = difficulties[(index / panos.len()) % difficulties.len()];
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(env as u64));
                rng.set_stream(index as u64);
                let mut spec = sample_episode(difficulty, pano, sampler, &mut rng)?;
                spec.corruption = corruption.map(|(kind, severity)| CorruptionSpec {
                    kind,
                    severity,
                    seed: spec.seed,
                });
                Ok(spec)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub n_envs: usize,
    pub env: EnvConfig,
    pub source: EpisodeSource,
    pub seed: u64,
    /// Strip true rotations from replies.
    pub hide_state: bool,
}

/// Outcome of one request on one env: reply frames to send in order.
pub enum Outcome {
    Frames(Vec<Vec<u8>>),
    Error(ErrorReply),
}

pub struct EnvSlot {
    id: usize,
    n_envs: usize,
    seed: u64,
    hide_state: bool,
    env: FindViewEnv,
    source: Arc<EpisodeSource>,
    cursor: usize,
    episode: Option<usize>,
}

fn error_code(e: &EnvError) -> ErrorCode {
    match e {
        EnvError::StepAfterDone => ErrorCode::EnvDone,
        EnvError::NotReset => ErrorCode::NotReset,
        EnvError::MissingPanorama { .. } => ErrorCode::MissingPanorama,
        _ => ErrorCode::InvalidSpec,
    }
}

impl EnvSlot {
    /// Env `id`'s cursor starts at `id` and advances by `n_envs`, so envs
    /// replay disjoint slices of an episode file.
    pub fn new(
        id: usize,
        cfg: &SessionConfig,
        source: Arc<EpisodeSource>,
        panoramas: Arc<dyn PanoramaSource>,
    ) -> Result<Self, EnvError> {
        Ok(Self {
            id,
            n_envs: cfg.n_envs,
            seed: cfg.seed,
            hide_state: cfg.hide_state,
            env: FindViewEnv::new(cfg.env, panoramas)?,
            source,
            cursor: id,
            episode: None,
        })
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    fn reply(&self, op: &str, r: &StepResult) -> Vec<Vec<u8>> {
        let reply = StepReply {
            ok: true,
            op: op.into(),
            env: self.id,
            episode: self.episode.expect("episode loaded"),
            step: r.info.step,
            reward: r.reward,
            reward_terms: r.info.reward,
            done: r.done,
            stop_called: r.info.stop_called,
            forced_termination: r.info.forced_termination,
            pose: (!self.hide_state).then_some(r.info.pose),
            target: (!self.hide_state).then_some(r.info.target),
        };
        let obs = encode_observation(&r.observation.target, &r.observation.current).expect("equal sizes");
        vec![serde_json::to_vec(&reply).expect("plain reply"), obs]
    }

    fn next_index(&mut self) -> usize {
        let i = match self.source.len() {
            Some(n) => self.cursor % n,
            None => self.cursor,
        };
        self.cursor += self.n_envs;
        i
    }

    pub fn handle(&mut self, req: &Request) -> Outcome {
        let id = self.id;
        let err = |code: ErrorCode, op: &str, msg: String| Outcome::Error(ErrorReply::new(code, Some(op), Some(id), msg));
        match req {
            Request::Reset { episode, .. } => {
                if let (Some(i), Some(n)) = (episode, self.source.len()) {
                    if *i >= n {
                        return err(ErrorCode::BadEpisode, "reset", format!("episode {i} out of range ({n} in file)"));
                    }
                }
                let index = match episode {
                    Some(i) => *i,
                    None => self.next_index(),
                };
                let spec = match self.source.episode(index, self.id, self.seed) {
                    Ok(s) => s,
                    Err(e) => return err(error_code(&e), "reset", e.to_string()),
                };
                match self.env.reset(&spec) {
                    Ok(r) => {
                        self.episode = Some(index);
                        Outcome::Frames(self.reply("reset", &r))
                    }
                    Err(e) => err(error_code(&e), "reset", e.to_string()),
                }
            }
            Request::Step { action, .. } => match self.env.step(*action) {
                Ok(r) => Outcome::Frames(self.reply("step", &r)),
                Err(e) => err(error_code(&e), "step", e.to_string()),
            },
            Request::Seek { cursor, .. } => {
                self.cursor = *cursor;
                let reply = SeekReply {
                    ok: true,
                    op: "seek".into(),
                    env: self.id,
                    cursor: self.cursor,
                };
                Outcome::Frames(vec![serde_json::to_vec(&reply).expect("plain reply")])
            }
            Request::Hello { .. } | Request::Close => unreachable!("handled by the connection"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use findview_core::dataset::PanoramaStore;
    use findview_core::environment::{Action, Pose};

    fn file_source(n: usize) -> EpisodeSource {
        EpisodeSource::File(Arc::new(
            (0..n)
                .map(|i| EpisodeSpec {
                    pano: "synth:voronoi:1:64x32".into(),
                    init: Pose::new(0, i as i32),
                    target: Pose::new(0, i as i32 + 2),
                    difficulty: None,
                    fov: 90,
                    corruption: None,
                    seed: i as u64,
                })
                .collect(),
        ))
    }

    fn cfg(source: EpisodeSource) -> SessionConfig {
        SessionConfig {
            n_envs: 2,
            env: EnvConfig {
                obs_width: 16,
                obs_height: 16,
                ..EnvConfig::default()
            },
            source,
            seed: 3,
            hide_state: false,
        }
    }

    fn step_reply(o: Outcome) -> StepReply {
        match o {
            Outcome::Frames(f) => serde_json::from_slice(&f[0]).unwrap(),
            Outcome::Error(e) => panic!("{e:?}"),
        }
    }

    #[test]
    fn cursors_interleave_and_wrap() {
        let c = cfg(file_source(3));
        let src = Arc::new(c.source.clone());
        let store: Arc<dyn PanoramaSource> = Arc::new(PanoramaStore::new());
        let mut a = EnvSlot::new(0, &c, src.clone(), store.clone()).unwrap();
        let mut b = EnvSlot::new(1, &c, src, store).unwrap();
        let reset = Request::Reset { env: 0, episode: None };
        let eps: Vec<usize> = (0..3).map(|_| step_reply(a.handle(&reset)).episode).collect();
        assert_eq!(eps, vec![0, 2, 1]);
        assert_eq!(step_reply(b.handle(&reset)).episode, 1);
        let explicit = Request::Reset { env: 1, episode: Some(2) };
        assert_eq!(step_reply(b.handle(&explicit)).episode, 2);
        assert!(matches!(
            b.handle(&Request::Reset { env: 1, episode: Some(9) }),
            Outcome::Error(e) if e.error == "bad-episode"
        ));
    }

    #[test]
    fn done_env_reports_env_done() {
        let c = cfg(file_source(1));
        let src = Arc::new(c.source.clone());
        let mut a = EnvSlot::new(0, &c, src, Arc::new(PanoramaStore::new())).unwrap();
        assert!(matches!(
            a.handle(&Request::Step { env: 0, action: Action::Up }),
            Outcome::Error(e) if e.error == "not-reset"
        ));
        a.handle(&Request::Reset { env: 0, episode: None });
        assert!(step_reply(a.handle(&Request::Step { env: 0, action: Action::Stop })).done);
        assert!(matches!(
            a.handle(&Request::Step { env: 0, action: Action::Up }),
            Outcome::Error(e) if e.error == "env-done"
        ));
    }

    #[test]
    fn sampler_is_deterministic_per_index() {
        let src = EpisodeSource::Sampler {
            panos: vec!["a".into(), "b".into()],
            difficulties: vec![Difficulty::Easy, Difficulty::Hard],
            sampler: SamplerConfig::default(),
            corruption: None,
        };
        assert_eq!(src.episode(5, 1, 9).unwrap(), src.episode(5, 1, 9).unwrap());
        assert_ne!(src.episode(5, 1, 9).unwrap(), src.episode(7, 1, 9).unwrap());
        let e = src.episode(2, 0, 9).unwrap();
        assert_eq!((e.pano.as_str(), e.difficulty), ("a", Some(Difficulty::Hard)));
    }
}
