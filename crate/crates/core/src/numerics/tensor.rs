use super::grid::Grid2D;
use super::NumericsError;

/// Dense row-major n-d array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NumericsError::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn to_grid(&self) -> Grid2D {
        assert_eq!(self.shape.len(), 2, "to_grid on shape {:?}", self.shape);
        Grid2D { rows: self.shape[0], cols: self.shape[1], data: self.data.clone() }
    }
}

impl From<Grid2D> for Tensor {
    fn from(g: Grid2D) -> Self {
        Tensor { shape: vec![g.rows, g.cols], data: g.data }
    }
}

impl From<&Grid2D> for Tensor {
    fn from(g: &Grid2D) -> Self {
        Tensor { shape: vec![g.rows, g.cols], data: g.data.clone() }
    }
}
