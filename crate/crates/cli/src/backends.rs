use std::time::Duration;

use a2t::decoder::PromptSpec;
use a2t::toy::{ToyLm, ToyMatcher, ToyWorld};
use a2t::wire::backend_addr;
use a2t::{
    GuidingConfig, Image, TranslationResult, Translator, VqaBackend, VqaOutput, WireBackend,
    WireClient,
};
use anyhow::{bail, Result};
use clap::ValueEnum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Toy,
    Wire,
}

pub enum Backends {
    Toy {
        world: ToyWorld,
        lm: ToyLm,
        matcher: ToyMatcher,
    },
    Wire(WireBackend),
}

impl Backends {
    pub fn open(kind: BackendKind, addr: Option<&str>, timeout: Option<f64>) -> Result<Self> {
        Ok(match kind {
            BackendKind::Toy => {
                let world = ToyWorld::standard();
                Backends::Toy {
                    lm: world.lm(),
                    matcher: world.matcher(),
                    world,
                }
            }
            BackendKind::Wire => {
                let addr = addr.map_or_else(backend_addr, str::to_string);
                log::info!("connecting to backend at {addr}");
                let mut client = WireClient::connect_tcp(&addr)?;
                if let Some(t) = timeout {
                    client = client.with_timeout(Duration::from_secs_f64(t));
                }
                Backends::Wire(WireBackend::new(client)?)
            }
        })
    }

    fn with_vqa<R>(
        &self,
        grid: Option<(usize, usize)>,
        f: impl FnOnce(&dyn VqaBackend) -> Result<R>,
    ) -> Result<R> {
        match self {
            Backends::Toy { world, .. } => {
                let Some((rows, cols)) = grid else {
                    bail!("the toy backend needs a patch grid: pass --scene or --grid");
                };
                f(&world.vqa(rows, cols))
            }
            Backends::Wire(w) => f(w),
        }
    }

    pub fn infer(
        &self,
        image: &Image,
        grid: Option<(usize, usize)>,
        question: &str,
    ) -> Result<VqaOutput> {
        self.with_vqa(grid, |vqa| Ok(vqa.infer(image, question)?))
    }

    pub fn translate(
        &self,
        image: &Image,
        grid: Option<(usize, usize)>,
        question: &str,
        ground_truth: Option<&str>,
        cfg: &GuidingConfig,
        prompt: &PromptSpec,
    ) -> Result<TranslationResult> {
        self.with_vqa(grid, |vqa| {
            let t = match self {
                Backends::Toy { lm, matcher, .. } => Translator::new(lm, matcher, vqa, cfg.clone()),
                Backends::Wire(w) => Translator::new(w, w, vqa, cfg.clone()),
            };
            Ok(t.with_prompt(prompt.clone())
                .translate(image, question, ground_truth)?)
        })
    }
}
