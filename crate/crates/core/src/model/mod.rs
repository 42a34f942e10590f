//! The assembled network: graph features, early fusion, patch selection,
//! state-space MIL, late fusion with the clinical embedding, and a task head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clinical::{cde_forward, clinical_recon_loss, ClinicalRecord, ClinicalSchema, CdeWeights, FieldSpec};
use crate::error::{Error, Result};
use crate::fusion::{ffm, FfmWeights, FusionConfig};
use crate::graph::{GraphEncoder, GraphEncoderConfig, GraphThresholds, PatchBag, SpatialGraph};
use crate::mil::{raster_order, MilConfig, MilEncoder, PatchScorer};
use crate::numkit::{Bound, Ctx, Matrix, ParameterStore, Real, Tape, Var};
use crate::objectives::{binary_logit, classification_head, init_head, survival_head, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSection {
    pub enabled: bool,
    pub thresholds: GraphThresholds,
    pub encoder: GraphEncoderConfig,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self { enabled: true, thresholds: GraphThresholds::default(), encoder: GraphEncoderConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClinicalSection {
    pub enabled: bool,
    pub hidden_dim: usize,
    pub id_column: String,
    pub fields: Vec<FieldSpec>,
}

impl Default for ClinicalSection {
    fn default() -> Self {
        Self { enabled: false, hidden_dim: 512, id_column: "patient_id".into(), fields: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub task: Task,
    #[serde(default)]
    pub graph: GraphSection,
    #[serde(default)]
    pub clinical: ClinicalSection,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub mil: MilConfig,
}

impl ModelConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            graph: GraphSection::default(),
            clinical: ClinicalSection::default(),
            fusion: FusionConfig::default(),
            mil: MilConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.graph.encoder.validate()?;
        self.fusion.validate()?;
        self.mil.validate()?;
        let t = &self.graph.thresholds;
        if !(t.tau_spatial > 0.0) || !(-1.0..=1.0).contains(&t.tau_tissue) {
            return Err(Error::Config("graph thresholds out of range".into()));
        }
        if self.clinical.enabled {
            if self.clinical.fields.is_empty() {
                return Err(Error::Config("clinical branch enabled without fields".into()));
            }
            if self.clinical.hidden_dim == 0 {
                return Err(Error::Config("clinical hidden_dim must be at least 1".into()));
            }
        }
        Ok(())
    }
}

/// Everything one forward pass needs about a sample.
pub struct SampleInput<'a> {
    pub bag: &'a PatchBag,
    /// Required when the graph branch is enabled.
    pub graph: Option<&'a SpatialGraph>,
    /// Required when the clinical branch is enabled.
    pub clinical: Option<&'a ClinicalRecord>,
}

pub struct ModelOutput {
    /// `N × 1` patch scores over the full bag.
    pub scores: Var,
    /// Selected patch indices, highest score first.
    pub selected_indices: Vec<usize>,
    /// Classification: `1 × 2` logits. Survival: `1 × 1` risk.
    pub prediction: Var,
    /// Scalar bag logit (classification only).
    pub bag_logit: Option<Var>,
    /// `λ′ × 1` scalar instance logits (classification only).
    pub instance_logits: Option<Var>,
    pub clinical_loss: Option<Var>,
    /// Classifier-layer weights subject to L2.
    pub penalized: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub d_patch: usize,
    pub graph: Option<GraphEncoder>,
    pub early: Option<FfmWeights>,
    pub scorer: PatchScorer,
    pub mil: MilEncoder,
    pub cde: Option<CdeWeights>,
    pub late: Option<FfmWeights>,
}

pub const HEAD_PREFIX: &str = "head";

impl Model {
    pub fn new(config: ModelConfig, d_patch: usize, schema: Option<&ClinicalSchema>) -> Result<Self> {
        config.validate()?;
        if d_patch == 0 {
            return Err(Error::Config("patch feature width must be at least 1".into()));
        }
        let (graph, early) = if config.graph.enabled {
            let g = GraphEncoder::new(config.graph.encoder.clone(), d_patch, "graph")?;
            let e = FfmWeights::new(config.fusion.clone(), d_patch, config.graph.encoder.out_dim, "early")?;
            (Some(g), Some(e))
        } else {
            (None, None)
        };
        let mil_in = early.as_ref().map_or(d_patch, FfmWeights::out_dim);
        let scorer = PatchScorer::new(mil_in, "aps");
        let mut mil = MilEncoder::new(config.mil.clone(), mil_in, "mil")?;
        if config.task == Task::Survival {
            mil = mil.without_instance_head();
        }
        let (cde, late) = if config.clinical.enabled {
            let schema = schema.ok_or_else(|| Error::Config("clinical branch enabled but no schema fitted".into()))?;
            let c = CdeWeights::new(schema, config.clinical.hidden_dim, "clinical")?;
            let l = FfmWeights::new(config.fusion.clone(), mil.d_model(), config.clinical.hidden_dim, "late")?;
            (Some(c), Some(l))
        } else {
            (None, None)
        };
        Ok(Self { config, d_patch, graph, early, scorer, mil, cde, late })
    }

    pub fn bag_dim(&self) -> usize {
        self.late.as_ref().map_or(self.mil.d_model(), FfmWeights::out_dim)
    }

    fn head_outputs(&self) -> usize {
        match self.config.task {
            Task::Classification => self.config.mil.num_classes,
            Task::Survival => 1,
        }
    }

    pub fn init_params<T: Real, R: Rng>(&self, store: &mut ParameterStore<T>, rng: &mut R) -> Result<()> {
        if let (Some(g), Some(e)) = (&self.graph, &self.early) {
            g.init_params(store, rng)?;
            e.init_params(store, rng)?;
        }
        self.scorer.init_params(store)?;
        self.mil.init_params(store, rng)?;
        if let (Some(c), Some(l)) = (&self.cde, &self.late) {
            c.init_params(store, rng)?;
            l.init_params(store, rng)?;
        }
        init_head(store, HEAD_PREFIX, self.bag_dim(), self.head_outputs(), rng)
    }

    pub fn build_graph(&self, bag: &PatchBag) -> Result<Option<SpatialGraph>> {
        if !self.config.graph.enabled {
            return Ok(None);
        }
        let t = &self.config.graph.thresholds;
        crate::graph::build_graph(bag, t.tau_spatial, t.tau_tissue).map(Some)
    }

    /// Per-patch features entering the selector: raw features, or their
    /// early fusion with graph embeddings when that branch is on.
    fn patch_features<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        input: &SampleInput<'_>,
        ctx: &mut Ctx<'_>,
    ) -> Result<Var> {
        let bag = input.bag;
        if bag.dim() != self.d_patch {
            return Err(Error::Shape(format!("model expects {} patch features, bag has {}", self.d_patch, bag.dim())));
        }
        let f = tape.constant(bag.features_as::<T>());
        Ok(match (&self.graph, &self.early) {
            (Some(g), Some(e)) => {
                let graph = input.graph.ok_or_else(|| Error::InvalidArgument("graph branch needs a graph".into()))?;
                if graph.num_vertices() != bag.len() {
                    return Err(Error::Shape("graph and bag sizes differ".into()));
                }
                let emb = g.forward(tape, p, graph, f, ctx)?;
                ffm(tape, p, e, f, emb.patches)?
            }
            _ => f,
        })
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        input: &SampleInput<'_>,
        ctx: &mut Ctx<'_>,
    ) -> Result<ModelOutput> {
        let bag = input.bag;
        let fused = self.patch_features(tape, p, input, ctx)?;
        let aps = self.scorer.aps(tape, p, fused, self.config.mil.lambda)?;
        let order = raster_order(&bag.coords, &aps.selected_indices);
        let mut rank = vec![0usize; bag.len()];
        for (k, &i) in aps.selected_indices.iter().enumerate() {
            rank[i] = k;
        }
        let pos: Vec<usize> = order.iter().map(|&i| rank[i]).collect();
        let seq = tape.gather_rows(aps.selected, &pos);
        let mil = self.mil.forward(tape, p, seq)?;

        let (z, clinical_loss) = match (&self.cde, &self.late) {
            (Some(c), Some(l)) => {
                let rec = input
                    .clinical
                    .ok_or_else(|| Error::InvalidArgument("clinical branch needs a clinical record".into()))?;
                let out = cde_forward(tape, p, c, rec)?;
                let loss = clinical_recon_loss(tape, c, rec, &out.reconstructions)?;
                (ffm(tape, p, l, mil.z_bag, out.embedding)?, Some(loss))
            }
            _ => (mil.z_bag, None),
        };
        let mut penalized = vec![p.var(&format!("{HEAD_PREFIX}.w"))];
        let (prediction, bag_logit, instance_logits) = match self.config.task {
            Task::Classification => {
                let logits = classification_head(tape, p, HEAD_PREFIX, z)?;
                let inst = mil.instance_logits.ok_or_else(|| Error::Shape("missing instance head".into()))?;
                penalized.push(p.var(&format!("{}.w", self.mil.instance_head_prefix())));
                let bag_logit = binary_logit(tape, logits)?;
                let inst = binary_logit(tape, inst)?;
                (logits, Some(bag_logit), Some(inst))
            }
            Task::Survival => (survival_head(tape, p, HEAD_PREFIX, z)?, None, None),
        };
        Ok(ModelOutput {
            scores: aps.scores,
            selected_indices: aps.selected_indices,
            prediction,
            bag_logit,
            instance_logits,
            clinical_loss,
            penalized,
        })
    }

    /// Eval-mode prediction: bag logit (classification) or risk (survival).
    pub fn predict<T: Real>(&self, store: &ParameterStore<T>, input: &SampleInput<'_>) -> Result<f64> {
        let mut tape = Tape::inference();
        let p = store.bind(&mut tape);
        let out = self.forward(&mut tape, &p, input, &mut Ctx::Eval)?;
        let v = out.bag_logit.unwrap_or(out.prediction);
        Ok(tape.scalar(v).as_f64())
    }

    /// Eval-mode patch scores for every patch in the bag. The clinical record
    /// is not needed: scoring happens before late fusion.
    pub fn patch_scores<T: Real>(&self, store: &ParameterStore<T>, input: &SampleInput<'_>) -> Result<Matrix<T>> {
        let mut tape = Tape::inference();
        let p = store.bind(&mut tape);
        let f = self.patch_features(&mut tape, &p, input, &mut Ctx::Eval)?;
        let s = self.scorer.scores(&mut tape, &p, f)?;
        Ok(tape.value(s).clone())
    }
}
