//! Contract checks every backend must pass before a run starts.

use super::{BackendError, Captioner, Embedder, Generator, ImageRef, Scorer};

const UNIT_TOL: f64 = 1e-5;
const PROBE_TEXT: &str = "a photo of a dog";

fn fail(msg: impl Into<String>) -> BackendError {
    BackendError::Conformance(msg.into())
}

fn check_unit(what: &str, v: &[f64]) -> Result<(), BackendError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_TOL || v.iter().any(|x| !x.is_finite()) {
        return Err(fail(format!("{what} has norm {norm}, expected 1")));
    }
    Ok(())
}

/// Probing returns one row per token at the advertised width, generation
/// honors the token budget, and a fixed seed reproduces its output.
pub fn check_generator(gen: &dyn Generator) -> Result<(), BackendError> {
    if gen.hidden_width() == 0 || gen.num_layers() == 0 {
        return Err(fail("generator reports zero width or zero layers"));
    }
    let layer = gen.num_layers() / 2;
    let acts = gen.probe_activations(PROBE_TEXT, layer)?;
    let tokens = gen.count_tokens(PROBE_TEXT);
    if acts.seq_len() != tokens {
        return Err(fail(format!(
            "probe returned {} rows for {tokens} tokens",
            acts.seq_len()
        )));
    }
    if acts.width() != gen.hidden_width() {
        return Err(fail(format!(
            "probe width {} differs from hidden width {}",
            acts.width(),
            gen.hidden_width()
        )));
    }
    let max_tokens = 4;
    let a = gen.generate(PROBE_TEXT, None, max_tokens, 7)?;
    if gen.count_tokens(&a) > max_tokens {
        return Err(fail(format!(
            "generated {} tokens with a budget of {max_tokens}",
            gen.count_tokens(&a)
        )));
    }
    let b = gen.generate(PROBE_TEXT, None, max_tokens, 7)?;
    if a != b {
        return Err(fail("generation is not reproducible for a fixed seed"));
    }
    Ok(())
}

/// Text and image embeddings are unit-norm and share a dimension.
pub fn check_scorer(scorer: &dyn Scorer, sample_image: &ImageRef) -> Result<(), BackendError> {
    let t = scorer.embed_text(PROBE_TEXT)?;
    check_unit("text embedding", &t)?;
    let i = scorer.embed_image(sample_image)?;
    check_unit("image embedding", &i)?;
    if t.len() != i.len() {
        return Err(fail(format!(
            "text dim {} differs from image dim {}",
            t.len(),
            i.len()
        )));
    }
    Ok(())
}

pub fn check_captioner(cap: &dyn Captioner, sample_image: &ImageRef) -> Result<(), BackendError> {
    let a = cap.caption(sample_image, PROBE_TEXT, 11)?;
    let b = cap.caption(sample_image, PROBE_TEXT, 11)?;
    if a != b {
        return Err(fail("captioner is not deterministic for a fixed seed"));
    }
    Ok(())
}

pub fn check_embedder(emb: &dyn Embedder) -> Result<(), BackendError> {
    let a = emb.embed(PROBE_TEXT)?;
    if a.is_empty() || a.iter().any(|x| !x.is_finite()) {
        return Err(fail("embedder returned an empty or non-finite vector"));
    }
    if a != emb.embed(PROBE_TEXT)? {
        return Err(fail("embedder is not deterministic"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::surrogate::*;
    use crate::backends::ActivationProbe;
    use crate::steering::{ActivationMatrix, GuidanceState};
    use std::collections::HashMap;
    use std::sync::Arc;

    #[test]
    fn surrogates_conform() {
        let w = Arc::new(SurrogateWorld::default());
        check_generator(&SurrogateGenerator::new(w.clone(), 0.7)).unwrap();
        check_generator(&SurrogateGenerator::greedy(w.clone())).unwrap();

        let img = ImageRef::new("i0");
        let images = HashMap::from([(
            img.clone(),
            vec![
                1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
            ],
        )]);
        check_scorer(&SurrogateScorer::new(w.clone(), images), &img).unwrap();

        let desc = HashMap::from([(img.clone(), "small bird".to_string())]);
        check_captioner(&SurrogateCaptioner::new(w.clone(), desc), &img).unwrap();
        check_embedder(&SurrogateEmbedder::new(w)).unwrap();
    }

    struct Chatty;

    impl ActivationProbe for Chatty {
        fn probe_activations(
            &self,
            text: &str,
            l: usize,
        ) -> Result<ActivationMatrix, BackendError> {
            let n = text.split_whitespace().count();
            Ok(ActivationMatrix::new(ndarray::Array2::zeros((n, 2)), l).unwrap())
        }
    }

    impl Generator for Chatty {
        fn hidden_width(&self) -> usize {
            2
        }
        fn num_layers(&self) -> usize {
            2
        }
        fn count_tokens(&self, text: &str) -> usize {
            text.split_whitespace().count()
        }
        fn generate(
            &self,
            _: &str,
            _: Option<&GuidanceState>,
            _: usize,
            _: u64,
        ) -> Result<String, BackendError> {
            Ok("far too many words for the budget".into())
        }
    }

    #[test]
    fn budget_violation_detected() {
        let err = check_generator(&Chatty).unwrap_err();
        assert!(err.to_string().contains("budget"), "{err}");
    }
}
