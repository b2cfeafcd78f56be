use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::nn::{checkpoint, ParamStore};

/// Stage-1 outputs cached for stage 2, one row per training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenBank {
    pub ids: Vec<u64>,
    pub y: Vec<f64>,
    /// x_m, `[n, d_m]`.
    pub unimodal: [Tensor; 3],
    /// x_{m'}, `[n, d_m]`.
    pub projected: [Tensor; 3],
    /// ŷ_{m'} = P^m(x_{m'}).
    pub projected_pred: [Vec<f64>; 3],
}

impl FrozenBank {
    pub fn new(
        ids: Vec<u64>,
        y: Vec<f64>,
        unimodal: [Tensor; 3],
        projected: [Tensor; 3],
        projected_pred: [Vec<f64>; 3],
    ) -> Result<Self> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("frozen bank has duplicate sample ids".into()));
        }
        if y.len() != n {
            return Err(Error::shape("frozen bank: label count differs from id count"));
        }
        for m in Modality::ALL {
            let (u, p) = (&unimodal[m.index()], &projected[m.index()]);
            if u.shape().len() != 2 || u.rows() != n || u.shape() != p.shape() || projected_pred[m.index()].len() != n {
                return Err(Error::shape(format!(
                    "frozen bank modality {m}: unimodal {:?}, projected {:?}, {} predictions for {n} ids",
                    u.shape(),
                    p.shape(),
                    projected_pred[m.index()].len()
                )));
            }
        }
        Ok(FrozenBank {
            ids,
            y,
            unimodal,
            projected,
            projected_pred,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn rep_dim(&self, m: Modality) -> usize {
        self.unimodal[m.index()].cols()
    }

    fn to_store(&self) -> Result<ParamStore> {
        let n = self.len();
        let mut s = ParamStore::new();
        // ids are far below 2^53, so f64 holds them exactly
        s.insert("id", Tensor::new(&[n], self.ids.iter().map(|&i| i as f64).collect())?)?;
        s.insert("y", Tensor::new(&[n], self.y.clone())?)?;
        for m in Modality::ALL {
            let i = m.index();
            s.insert(format!("x_{m}"), self.unimodal[i].detach())?;
            s.insert(format!("xp_{m}"), self.projected[i].detach())?;
            s.insert(format!("yp_{m}"), Tensor::new(&[n], self.projected_pred[i].clone())?)?;
        }
        Ok(s)
    }

    pub fn to_text(&self) -> Result<String> {
        Ok(checkpoint::to_string(&self.to_store()?))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let s = checkpoint::from_str(text)?;
        let ids = s
            .get("id")?
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as u64)
                } else {
                    Err(Error::Config(format!("frozen bank: bad sample id {v}")))
                }
            })
            .collect::<Result<Vec<u64>>>()?;
        let y = s.get("y")?.to_vec();
        let uni = Modality::ALL.map(|m| s.get(&format!("x_{m}")).cloned());
        let proj = Modality::ALL.map(|m| s.get(&format!("xp_{m}")).cloned());
        let pred = Modality::ALL.map(|m| s.get(&format!("yp_{m}")).map(Tensor::to_vec));
        let [ua, uv, ul] = uni;
        let [pa, pv, pl] = proj;
        let [ya, yv, yl] = pred;
        FrozenBank::new(ids, y, [ua?, uv?, ul?], [pa?, pv?, pl?], [ya?, yv?, yl?])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::textio::write_atomic(path, self.to_text()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        FrozenBank::from_text(&crate::textio::read_to_string(path)?)
    }
}
