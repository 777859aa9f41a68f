//! Built-in scenes used by the CLI `gen --preset` and by the test suites.

use super::scene::SceneSpec;

/// One textured sphere seen by a ring of eight cameras.
pub const SPHERE: &str = "
sphere id=1 center=0,0,0 radius=0.3 color=0.85,0.45,0.25 texture=14
ring count=8 radius=2.0 elevation=0.8 target=0,0,0 width=64 height=48 fov=40
";

/// Three separated objects, eight views, exact depth.
pub const THREE_OBJECTS: &str = "
sphere id=1 center=-0.5,-0.2,0 radius=0.25 color=0.85,0.3,0.25 texture=14
box id=2 min=0.2,-0.65,-0.2 max=0.6,-0.25,0.2 color=0.25,0.7,0.35 texture=14
sphere id=3 center=0.1,0.55,0 radius=0.22 color=0.3,0.4,0.9 texture=14
ring count=8 radius=2.6 elevation=1.6 target=0,0,0 width=80 height=60 fov=45
";

/// Objects on a floor inside four walls; floor and walls are background.
pub const INDOOR_BOX: &str = "
box id=10 min=-2.5,-2.5,-0.45 max=2.5,2.5,-0.35 color=0.6,0.6,0.55 background
box id=11 min=2.4,-2.5,-0.35 max=2.5,2.5,1.5 color=0.7,0.65,0.6 background
box id=12 min=-2.5,-2.5,-0.35 max=-2.4,2.5,1.5 color=0.7,0.65,0.6 background
box id=13 min=-2.5,2.4,-0.35 max=2.5,2.5,1.5 color=0.65,0.7,0.6 background
box id=14 min=-2.5,-2.5,-0.35 max=2.5,-2.4,1.5 color=0.65,0.7,0.6 background
sphere id=1 center=-0.4,-0.1,-0.1 radius=0.25 color=0.85,0.3,0.25 texture=14
box id=2 min=0.2,-0.5,-0.35 max=0.55,-0.15,0.05 color=0.25,0.7,0.35 texture=14
sphere id=3 center=0.1,0.5,-0.13 radius=0.22 color=0.3,0.4,0.9 texture=14
ring count=8 radius=1.8 elevation=1.0 target=0,0,-0.1 width=80 height=60 fov=60
";

/// Three small objects seen from a forward-facing arc; exact depths in views
/// 0-6 and a corrupted region in view 7.
pub const CORRUPTED_VIEW: &str = "
sphere id=1 center=-0.3,-0.12,0 radius=0.15 color=0.85,0.3,0.25 texture=14
box id=2 min=0.1,-0.38,-0.13 max=0.34,-0.14,0.11 color=0.25,0.7,0.35 texture=14
sphere id=3 center=0.06,0.3,0 radius=0.14 color=0.3,0.4,0.9 texture=14
ring count=8 radius=1.6 elevation=0.7 target=0,0,0 width=96 height=72 fov=45 start=-35 span=70
corrupt view=7 region=24,12,72,60 bias=0.08 sigma=0.07 warp=0.06
";

/// Closed desk-scale room with three textured objects; four views carry
/// corrupted regions and two views a mild affine distortion.
pub const TRAINING: &str = "
box id=10 min=-0.7,-0.7,-0.35 max=0.7,0.7,-0.3 color=0.6,0.58,0.52 texture=6 background
box id=11 min=0.65,-0.7,-0.3 max=0.7,0.7,0.5 color=0.7,0.62,0.55 texture=5 background
box id=12 min=-0.7,-0.7,-0.3 max=-0.65,0.7,0.5 color=0.55,0.62,0.7 texture=5 background
box id=13 min=-0.65,0.65,-0.3 max=0.65,0.7,0.5 color=0.62,0.7,0.55 texture=5 background
box id=14 min=-0.65,-0.7,-0.3 max=0.65,-0.65,0.5 color=0.7,0.55,0.62 texture=5 background
box id=15 min=-0.7,-0.7,0.5 max=0.7,0.7,0.55 color=0.8,0.8,0.8 texture=4 background
sphere id=1 center=-0.25,-0.1,-0.17 radius=0.13 color=0.85,0.3,0.25 texture=14
box id=2 min=0.08,0.1,-0.3 max=0.28,0.3,-0.1 color=0.25,0.7,0.35 texture=14
sphere id=3 center=0.18,-0.3,-0.2 radius=0.1 color=0.3,0.4,0.9 texture=14
ring count=8 radius=0.5 elevation=0.35 target=0,0,-0.18 width=64 height=48 fov=60
affine view=2 scale=1.08 shift=-0.05
affine view=5 scale=0.95 shift=0.08
corrupt view=1 region=16,12,48,40 bias=0.12 sigma=0.03 warp=0.05
corrupt view=3 region=12,10,44,38 bias=0.1 sigma=0.03 warp=0.05
corrupt view=4 region=16,12,48,40 bias=0.12 sigma=0.03 warp=0.05
corrupt view=6 region=16,12,48,40 bias=0.1 sigma=0.03 warp=0.05
";

pub fn by_name(name: &str) -> Option<SceneSpec> {
    let text = match name {
        "sphere" => SPHERE,
        "three-objects" => THREE_OBJECTS,
        "indoor-box" => INDOOR_BOX,
        "corrupted-view" => CORRUPTED_VIEW,
        "training" => TRAINING,
        _ => return None,
    };
    Some(SceneSpec::parse(text).expect("built-in scene parses"))
}

pub const NAMES: [&str; 5] = ["sphere", "three-objects", "indoor-box", "corrupted-view", "training"];
