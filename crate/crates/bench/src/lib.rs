//! Shared inputs for the criterion benchmarks: a rendered five-object scene
//! seen from the reference camera, and a registration problem started near
//! the truth.

use d2co::dcd::{build_dcd, DcdTensor};
use d2co::experiments::{detection_grid, table_bank, Setup};
use d2co::geometry::Pose;
use d2co::sim::{self, render_observation, NoiseParams, Observation, SyntheticScene, ViewAction};
use d2co::template::{RasterTemplate, TemplateBank};
use nalgebra::Vector3;

pub struct Fixture {
    pub setup: Setup,
    pub scene: SyntheticScene,
    pub view: ViewAction,
    pub observation: Observation,
    pub tensor: DcdTensor,
    /// Bank of the first model over the detection grid.
    pub bank: TemplateBank,
    /// Template and start pose for registering the first placement.
    pub template: RasterTemplate,
    pub initial: Pose,
}

impl Fixture {
    pub fn new() -> Self {
        let setup = Setup::default();
        let ws = d2co::geometry::Aabb {
            min: Vector3::new(-0.08, -0.08, 0.0),
            max: Vector3::new(0.08, 0.08, 0.1),
        };
        let scene = sim::generate_scene(&setup.models, 5, &ws, 11).expect("scene fits");
        let view = ViewAction {
            id: 0,
            camera_pose: setup.reference,
            intrinsics: setup.intrinsics,
        };
        let noise = NoiseParams {
            clutter_count: 20,
            ..Default::default()
        };
        let observation = render_observation(&scene, &view, &setup.models, &noise, 3).expect("renders");
        let tensor = build_dcd(&observation.edgels, &setup.dcd).expect("tensor");
        let bank = table_bank(&setup.models[0], &detection_grid(), &setup.reference, &setup.intrinsics).expect("bank");
        let p = &scene.placements[0];
        let model = sim::model_by_id(&setup.models, &p.object_id).expect("known model");
        let truth = setup.reference.compose(&p.pose);
        let initial = sim::perturb_pose(&truth, 0.005, 0.05, 1);
        let template = model.template(&initial, &setup.intrinsics).expect("visible");
        Self {
            setup,
            scene,
            view,
            observation,
            tensor,
            bank,
            template,
            initial,
        }
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
