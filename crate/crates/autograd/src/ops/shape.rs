use ndarray::{concatenate, linalg::general_mat_mul, Array2, ArrayD, Axis, Ix2, IxDyn, Slice};

use crate::{Real, Tensor, Var};

fn reshaped<T: Real>(t: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    t.as_standard_layout()
        .into_owned()
        .into_shape_with_order(IxDyn(shape))
        .expect("reshape: element count mismatch")
}

fn as_matrix<T: Real>(t: &Tensor<T>) -> ndarray::ArrayView2<'_, T> {
    t.view()
        .into_dimensionality::<Ix2>()
        .expect("expected a 2-axis tensor")
}

impl<'g, T: Real> Var<'g, T> {
    pub fn sum_all(self) -> Var<'g, T> {
        let v = self.value();
        let out = ArrayD::from_elem(IxDyn(&[]), v.sum());
        let shape = v.raw_dim();
        self.op(&[self], out, move |g, _| {
            let s = *g.iter().next().unwrap();
            vec![Some(ArrayD::from_elem(shape.clone(), s))]
        })
    }

    pub fn mean_all(self) -> Var<'g, T> {
        let n = self.value().len();
        assert!(n > 0, "mean of an empty tensor");
        self.sum_all().mul_scalar(T::one() / T::lit(n as f64))
    }

    /// Sums over `axes`, keeping them as length-1 axes.
    pub fn sum_keepdim(self, axes: &[usize]) -> Var<'g, T> {
        let v = self.value();
        let mut out = (*v).clone();
        for &a in axes {
            out = out.sum_axis(Axis(a)).insert_axis(Axis(a));
        }
        let shape = v.raw_dim();
        self.op(&[self], out, move |g, _| {
            vec![Some(g.broadcast(shape.clone()).unwrap().to_owned())]
        })
    }

    pub fn mean_keepdim(self, axes: &[usize]) -> Var<'g, T> {
        let shape = self.shape();
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        self.sum_keepdim(axes)
            .mul_scalar(T::one() / T::lit(count as f64))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g, T> {
        let v = self.value();
        let out = reshaped(&v, shape);
        let orig = v.shape().to_vec();
        self.op(&[self], out, move |g, _| vec![Some(reshaped(g, &orig))])
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'g, T> {
        let v = self.value();
        assert!(start + len <= v.shape()[axis], "narrow out of range");
        let out = v
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        let shape = v.raw_dim();
        self.op(&[self], out, move |g, _| {
            let mut full = ArrayD::zeros(shape.clone());
            full.slice_axis_mut(Axis(axis), Slice::from(start..start + len))
                .assign(g);
            vec![Some(full)]
        })
    }

    pub fn concat(parts: &[Var<'g, T>], axis: usize) -> Var<'g, T> {
        assert!(!parts.is_empty(), "concat of nothing");
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let out = concatenate(Axis(axis), &views).expect("concat: incompatible shapes");
        let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        parts[0].op(parts, out, move |g, need| {
            let mut start = 0;
            lens.iter()
                .zip(need)
                .map(|(&len, &n)| {
                    let piece = n.then(|| {
                        g.slice_axis(Axis(axis), Slice::from(start..start + len))
                            .to_owned()
                    });
                    start += len;
                    piece
                })
                .collect()
        })
    }

    /// 2-axis matrix product.
    pub fn matmul(self, rhs: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), rhs.value());
        let out = as_matrix(&a).dot(&as_matrix(&b)).into_dyn();
        self.op(&[self, rhs], out, move |g, need| {
            let gm = as_matrix(g);
            let ga = need[0].then(|| gm.dot(&as_matrix(&b).t()).into_dyn());
            let gb = need[1].then(|| as_matrix(&a).t().dot(&gm).into_dyn());
            vec![ga, gb]
        })
    }

    /// `x · wᵀ (+ b)` with `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(self, weight: Var<'g, T>, bias: Option<Var<'g, T>>) -> Var<'g, T> {
        let (x, w) = (self.value(), weight.value());
        let (xm, wm) = (as_matrix(&x), as_matrix(&w));
        let mut out = Array2::<T>::zeros((xm.nrows(), wm.nrows()));
        general_mat_mul(T::one(), &xm, &wm.t(), T::zero(), &mut out);
        let y = self.op(&[self, weight], out.into_dyn(), move |g, need| {
            let gm = as_matrix(g);
            let gx = need[0].then(|| gm.dot(&as_matrix(&w)).into_dyn());
            let gw = need[1].then(|| gm.t().dot(&as_matrix(&x)).into_dyn());
            vec![gx, gw]
        });
        match bias {
            Some(b) => y.add(b),
            None => y,
        }
    }

    pub fn transpose2(self) -> Var<'g, T> {
        let v = self.value();
        let out = as_matrix(&v).t().to_owned().into_dyn();
        self.op(&[self], out, |g, _| {
            vec![Some(as_matrix(g).t().to_owned().into_dyn())]
        })
    }
}

#[cfg(test)]
mod tests {
    use crate::Graph;
    use ndarray::{arr2, Array};

    #[test]
    fn narrow_and_concat_are_inverse() {
        let g = Graph::<f64>::new();
        let x = g.variable(Array::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64).into_dyn());
        let a = x.narrow(0, 0, 1);
        let b = x.narrow(0, 1, 3);
        let y = crate::Var::concat(&[a, b], 0);
        assert_eq!(*y.value(), *x.value());
        let grads = g.backward(y.mul(y).sum_all());
        assert_eq!(grads.get(x).unwrap(), &x.value().mapv(|v| 2.0 * v));
    }

    #[test]
    fn linear_matches_matmul() {
        let g = Graph::<f64>::new();
        let x = g.constant(arr2(&[[1.0, 2.0], [3.0, 4.0]]).into_dyn());
        let w = g.constant(arr2(&[[1.0, 0.0], [1.0, 1.0], [0.0, 2.0]]).into_dyn());
        let y = x.linear(w, None);
        let z = x.matmul(w.transpose2());
        assert_eq!(*y.value(), *z.value());
    }
}
