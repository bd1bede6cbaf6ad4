pub mod assembly;
pub mod bench;
pub mod kkt;
pub mod linalg;
pub mod mesh;
pub mod ocp_spacetime;
pub mod ocp_steady;
pub mod pod_rom;
