use super::{deformable_attend, depth_pe, gated_fuse, DdaLayerParams};
use crate::error::{Error, Result};
use crate::geometry::{select_camera, CameraModel, Point3};
use crate::tensor::Tensor;

/// One v-query and one c-query per non-empty voxel, with the voxel center,
/// its projection into the selected camera and the quantized reference
/// cell. Queries no camera sees are invalid and keep a zero c-query.
#[derive(Clone, Debug)]
pub struct DualQuerySet {
    /// `[Q, d]`
    pub v_queries: Tensor,
    /// `[Q, d]`
    pub c_queries: Tensor,
    pub p3d: Vec<Point3>,
    /// Continuous projection in feature cells (meaningless when invalid).
    pub p2d: Vec<[f64; 2]>,
    /// Quantized reference cell used as the deformable anchor.
    pub pixels: Vec<Option<[usize; 2]>>,
    /// Index of the selected camera.
    pub camera_ids: Vec<Option<usize>>,
}

/// Per-voxel camera choice and reference points.
#[derive(Clone, Debug, Default)]
pub struct References {
    pub p2d: Vec<[f64; 2]>,
    pub pixels: Vec<Option<[usize; 2]>>,
    pub camera_ids: Vec<Option<usize>>,
}

impl References {
    pub fn select(centers: &[Point3], cameras: &[CameraModel]) -> Self {
        let mut refs = References::default();
        for p in centers {
            match select_camera(cameras, p) {
                Some((cam, proj)) => {
                    refs.p2d.push(proj.p2d);
                    refs.pixels.push(proj.pixel());
                    refs.camera_ids.push(Some(cam));
                }
                None => {
                    refs.p2d.push([0.0, 0.0]);
                    refs.pixels.push(None);
                    refs.camera_ids.push(None);
                }
            }
        }
        refs
    }
}

impl DualQuerySet {
    pub fn new(v_queries: Tensor, c_queries: Tensor, p3d: Vec<Point3>, refs: References) -> Result<Self> {
        let q = p3d.len();
        if v_queries.rank() != 2 || v_queries.shape()[0] != q || c_queries.shape() != v_queries.shape() {
            return Err(Error::shape("dual queries", v_queries.shape(), c_queries.shape()));
        }
        if refs.p2d.len() != q || refs.pixels.len() != q || refs.camera_ids.len() != q {
            return Err(Error::invalid("reference arrays must have one entry per query"));
        }
        if refs.pixels.iter().zip(&refs.camera_ids).any(|(p, c)| p.is_some() != c.is_some()) {
            return Err(Error::invalid("a query is valid iff it has both a camera and a pixel"));
        }
        let d = v_queries.shape()[1];
        {
            let c = c_queries.data();
            for (i, cam) in refs.camera_ids.iter().enumerate() {
                if cam.is_none() && c[i * d..(i + 1) * d].iter().any(|&x| x != 0.0) {
                    return Err(Error::invalid(format!("invalid query {i} has a non-zero c-query")));
                }
            }
        }
        Ok(DualQuerySet {
            v_queries,
            c_queries,
            p3d,
            p2d: refs.p2d,
            pixels: refs.pixels,
            camera_ids: refs.camera_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.p3d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p3d.is_empty()
    }

    pub fn is_valid(&self, q: usize) -> bool {
        self.camera_ids[q].is_some()
    }

    pub fn valid_count(&self) -> usize {
        self.camera_ids.iter().filter(|c| c.is_some()).count()
    }

    /// Forward-axis coordinates used as depths for the positional encoding.
    pub fn depths(&self) -> Vec<f64> {
        self.p3d.iter().map(|p| p[0]).collect()
    }
}

/// One dual-fusion layer. The depth encoding is added to both queries; each
/// valid query then attends into its camera map (`fmaps[camera_id]`, shape
/// `[W, H, C]`) and the two streams are gated together. Invalid queries
/// keep their v-query as is and a zero c-query.
pub fn dual_fusion_layer(params: &DdaLayerParams, fmaps: &[Tensor], queries: &DualQuerySet) -> Result<DualQuerySet> {
    let q = queries.len();
    let d = params.d_model();
    if queries.v_queries.shape() != [q, d] {
        return Err(Error::shape("dual_fusion_layer", queries.v_queries.shape(), &[q, d]));
    }
    if let Some(&Some(bad)) = queries.camera_ids.iter().find(|c| c.is_some_and(|c| c >= fmaps.len())) {
        return Err(Error::invalid(format!("query refers to camera {bad} but only {} maps given", fmaps.len())));
    }
    if queries.valid_count() == 0 {
        return Ok(queries.clone());
    }

    let pe = depth_pe(&Tensor::new(queries.depths(), &[q])?, d)?;
    let c_in = queries.c_queries.add(&pe)?;
    let v_in = queries.v_queries.add(&pe)?;

    let mut new_c: Option<Tensor> = None;
    let mut new_v: Option<Tensor> = None;
    let accumulate = |slot: &mut Option<Tensor>, t: Tensor| -> Result<()> {
        *slot = Some(match slot.take() {
            Some(acc) => acc.add(&t)?,
            None => t,
        });
        Ok(())
    };
    for (cam, fmap) in fmaps.iter().enumerate() {
        let rows: Vec<usize> = (0..q).filter(|&i| queries.camera_ids[i] == Some(cam)).collect();
        if rows.is_empty() {
            continue;
        }
        let refs: Vec<[f64; 2]> = rows
            .iter()
            .map(|&i| {
                let [u, v] = queries.pixels[i].expect("valid query has a pixel");
                [u as f64, v as f64]
            })
            .collect();
        let qc = c_in.index_select(&rows)?;
        let qv = v_in.index_select(&rows)?;
        let attended = deformable_attend(params, fmap, &qc, &qv, &refs)?;
        let (c2, v2) = gated_fuse(params, &attended, &qv)?;
        accumulate(&mut new_c, c2.scatter_add(&rows, q)?)?;
        accumulate(&mut new_v, v2.scatter_add(&rows, q)?)?;
    }

    let keep: Vec<f64> = (0..q)
        .flat_map(|i| std::iter::repeat_n(if queries.is_valid(i) { 0.0 } else { 1.0 }, d))
        .collect();
    let keep = Tensor::new(keep, &[q, d])?;
    let v_queries = new_v
        .expect("some query is valid")
        .add(&queries.v_queries.mul(&keep)?)?;
    Ok(DualQuerySet {
        v_queries,
        c_queries: new_c.expect("some query is valid"),
        p3d: queries.p3d.clone(),
        p2d: queries.p2d.clone(),
        pixels: queries.pixels.clone(),
        camera_ids: queries.camera_ids.clone(),
    })
}
