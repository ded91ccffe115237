use super::catalog::SubjectInstance;
use super::generate::shrink_odd;
use super::{ObjectSpec, Rect, SceneSpec, Shape};
use crate::error::{Error, Result};
use crate::relation::Relation;

/// Center distance (pixels) below which a pair is considered ambiguous.
pub const DEAD_ZONE_RADIUS: f64 = 3.0;

/// Exact geometric relation of `subject_id` with respect to `reference_id`.
pub fn relation_oracle(scene: &SceneSpec, reference_id: u32, subject_id: u32) -> Result<Option<Relation>> {
    let reference = scene.object(reference_id)?;
    let subject = scene.object(subject_id)?;
    if reference_id == subject_id {
        return Ok(None);
    }
    if subject.container_id == Some(reference_id) {
        return Ok(Some(Relation::Inside));
    }
    if subject.support_id == Some(reference_id) {
        return Ok(Some(Relation::OnTop));
    }
    // The reverse of containment or support has no name in the relation set.
    if reference.container_id == Some(subject_id) || reference.support_id == Some(subject_id) {
        return Ok(None);
    }
    Ok(center_relation(scene.depth_projection, reference, subject.bbox().center()))
}

fn center_relation(projection: f64, reference: &ObjectSpec, subject_center: (f64, f64)) -> Option<Relation> {
    let (rx, ry) = reference.bbox().center();
    let dx = subject_center.0 - rx;
    let dy = subject_center.1 - ry;
    if dx.hypot(dy) < DEAD_ZONE_RADIUS {
        return None;
    }
    let depth = dy / projection;
    Some(if dx.abs() >= depth.abs() {
        if dx < 0.0 {
            Relation::Left
        } else {
            Relation::Right
        }
    } else if dy > 0.0 {
        Relation::InFront
    } else {
        Relation::Behind
    })
}

/// Relations a reference object can take part in.
pub fn feasible_relations(reference: &ObjectSpec) -> Vec<Relation> {
    Relation::ALL
        .into_iter()
        .filter(|r| match r {
            Relation::Inside => reference.shape == Shape::OpenContainer,
            Relation::OnTop => reference.shape.supports(),
            _ => true,
        })
        .collect()
}

/// Adds `subject` to the scene at pixel `(u, v)`.
///
/// A point on the reference footprint puts the subject inside it (containers,
/// shrunk and clamped into the interior) or on top of it (everything else);
/// any other point puts it on the floor centered at the point.
pub fn insert_subject(
    scene: &SceneSpec,
    reference_id: u32,
    subject: &SubjectInstance,
    u: i32,
    v: i32,
) -> Result<(SceneSpec, u32)> {
    let reference = scene.object(reference_id)?;
    if subject.size.0 < 1 || subject.size.1 < 1 || subject.size.0 % 2 == 0 || subject.size.1 % 2 == 0 {
        return Err(Error::InvalidArgument(format!("subject size {:?} must be odd and positive", subject.size)));
    }
    let id = scene.next_id();
    let mut obj = ObjectSpec {
        id,
        name: subject.name.clone(),
        shape: subject.shape,
        center: (u, v),
        size: subject.size,
        color: subject.color,
        depth_rank: 0,
        support_id: None,
        container_id: None,
    };
    if reference.bbox().contains(u, v) {
        if let Some(interior) = reference.interior() {
            obj.size = (shrink_odd(obj.size.0, interior.w), shrink_odd(obj.size.1, interior.h));
            obj.center = (
                clamp_center(u, interior.x, interior.w, obj.size.0),
                clamp_center(v, interior.y, interior.h, obj.size.1),
            );
            obj.container_id = Some(reference_id);
        } else {
            obj.support_id = Some(reference_id);
        }
    }
    let mut out = scene.clone();
    out.objects.push(obj);
    out.assign_depth_ranks();
    Ok((out, id))
}

fn clamp_center(c: i32, start: i32, extent: i32, size: i32) -> i32 {
    let half = (size - 1) / 2;
    let lo = start + half;
    let hi = (start + extent - 1 - half).max(lo);
    c.clamp(lo, hi)
}

/// Relation the oracle would assign after inserting a subject at `(u, v)`.
/// Equivalent to [`insert_subject`] followed by [`relation_oracle`].
pub fn placement_label(scene: &SceneSpec, reference_id: u32, u: i32, v: i32) -> Result<Option<Relation>> {
    let reference = scene.object(reference_id)?;
    if reference.bbox().contains(u, v) {
        return Ok(Some(if reference.shape == Shape::OpenContainer { Relation::Inside } else { Relation::OnTop }));
    }
    Ok(center_relation(scene.depth_projection, reference, (u as f64, v as f64)))
}

/// Row-major mask of pixels inside `within` whose placement yields `relation`.
pub fn relation_region(scene: &SceneSpec, reference_id: u32, relation: Relation, within: &Rect) -> Result<Vec<bool>> {
    let (w, h) = (scene.width as usize, scene.height as usize);
    let mut out = vec![false; w * h];
    for v in 0..h as i32 {
        for u in 0..w as i32 {
            if within.contains(u, v) && placement_label(scene, reference_id, u, v)? == Some(relation) {
                out[v as usize * w + u as usize] = true;
            }
        }
    }
    Ok(out)
}
