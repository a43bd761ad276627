import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from muxconv.binarize import (BC, FULL32, PRUNED_BC, BinaryWeightPlane,
                              LatentWeights, bc_update, binarize,
                              memory_footprint)
from muxconv.network import LayerSpec, NetworkConfig
from muxconv.pruning import build_mask, kept_position, random_mask
from muxconv.tensors import KernelTensor


def latent_filled(value, in_maps=4, out_maps=4):
    w = KernelTensor(np.full((3, 3, in_maps, out_maps), float(value)))
    return LatentWeights(w, build_mask(3, 3, in_maps, out_maps))


class TestBinarize:
    def test_all_positive(self):
        plane = binarize(latent_filled(0.3), P=2)
        assert plane.bits.all()

    def test_negative_slice_bit(self):
        latent = latent_filled(0.3)
        col, row = kept_position(2, 3, 3)
        latent.weights.set_at(col, row, 2, 1, -0.7)
        plane = binarize(latent, P=2)
        assert plane.bit(2, 1) == 0
        assert plane.bit(2, 0) == 1

    def test_tie_at_zero_is_positive(self):
        plane = binarize(latent_filled(0.0))
        assert plane.bits.all()

    def test_random_mask_rejected(self):
        w = KernelTensor(np.ones((3, 3, 4, 4)))
        latent = LatentWeights(w, random_mask(3, 3, 4, 4, 8, seed=0))
        with pytest.raises(ValueError):
            binarize(latent)

    def test_group_width_must_divide(self):
        with pytest.raises(ValueError):
            binarize(latent_filled(1.0, out_maps=6), P=4)

    def test_depends_only_on_signs(self, rng):
        base = rng.uniform(-1, 1, (3, 3, 5, 5))
        mask = build_mask(3, 3, 5, 5)
        a = binarize(LatentWeights(KernelTensor(base), mask))
        scaled = base * rng.uniform(0.05, 1.0, base.shape)  # sign-preserving
        b = binarize(LatentWeights(KernelTensor(scaled), mask))
        assert np.array_equal(a.bits, b.bits)

    def test_pruned_values_do_not_matter(self, rng):
        mask = build_mask(3, 3, 4, 4)
        base = rng.uniform(0.1, 1, (3, 3, 4, 4))
        noise = np.where(mask.kept, base, -base)  # flip only pruned signs
        a = binarize(LatentWeights(KernelTensor(base), mask))
        b = binarize(LatentWeights(KernelTensor(noise), mask))
        assert np.array_equal(a.bits, b.bits)


class TestPacking:
    def test_bit_addressing(self):
        # bit index = group*(in_maps*P) + k*P + lane
        in_maps, out_maps, P = 3, 4, 2
        latent = latent_filled(1.0, in_maps, out_maps)
        for k in range(in_maps):
            col, row = kept_position(k, 3, 3)
            for l in range(out_maps):
                sign = 1.0 if (k + l) % 2 == 0 else -1.0
                latent.weights.set_at(col, row, k, l, sign)
        plane = binarize(latent, P)
        for k in range(in_maps):
            for l in range(out_maps):
                expected = 1 if (k + l) % 2 == 0 else 0
                assert plane.bit(k, l) == expected
                g, p = divmod(l, P)
                flat = g * (in_maps * P) + k * P + p
                assert plane.bits[flat] == expected

    def test_lane_word_matches_bits(self):
        rng = np.random.default_rng(3)
        bits = rng.integers(0, 2, 24).astype(np.uint8)
        plane = BinaryWeightPlane(3, 3, 6, 4, 2, bits)
        for g in range(2):
            for k in range(6):
                word = plane.lane_word(g, k)
                for p in range(2):
                    assert word[p] == bool(plane.bit(k, g * 2 + p))

    def test_packed_bytes_little_endian(self):
        bits = np.zeros(9, dtype=np.uint8)
        bits[0] = 1  # first weight -> bit 0 of byte 0
        bits[8] = 1  # ninth weight -> bit 0 of byte 1
        plane = BinaryWeightPlane(3, 3, 3, 3, 1, bits)
        assert plane.packed_bytes() == bytes([0x01, 0x01])

    def test_pack_roundtrip(self, rng):
        bits = rng.integers(0, 2, 40).astype(np.uint8)
        plane = BinaryWeightPlane(3, 3, 10, 4, 4, bits)
        again = BinaryWeightPlane.from_packed(plane.packed_bytes(), 3, 3, 10, 4, 4)
        assert np.array_equal(again.bits, plane.bits)

    def test_sign_matrix_agrees(self, rng):
        latent = LatentWeights(
            KernelTensor(rng.uniform(-1, 1, (3, 3, 7, 6))), build_mask(3, 3, 7, 6))
        plane = binarize(latent, P=3)
        signs = plane.sign_matrix()
        for k in range(7):
            for l in range(6):
                assert signs[k, l] == plane.sign(k, l)


class TestBcUpdate:
    def test_zero_grad_is_identity(self, rng):
        latent = latent_filled(0.5)
        out = bc_update(latent, KernelTensor.zeros(3, 3, 4, 4), 0.1)
        assert np.array_equal(out.weights.data, latent.weights.data)

    def test_clips_to_one(self):
        latent = latent_filled(0.95)
        grad = KernelTensor(np.full((3, 3, 4, 4), -1.0))
        out = bc_update(latent, grad, 0.1)
        col, row = kept_position(0, 3, 3)
        assert out.weights.at(col, row, 0, 0) == 1.0  # clipped from 1.05

    def test_pruned_positions_untouched(self, rng):
        latent = latent_filled(0.5)
        grad = KernelTensor(rng.uniform(-5, 5, (3, 3, 4, 4)))
        out = bc_update(latent, grad, 0.7)
        pruned = ~latent.mask.kept
        assert np.array_equal(out.weights.data[pruned], latent.weights.data[pruned])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            bc_update(latent_filled(0.1), KernelTensor.zeros(3, 3, 4, 5), 0.1)

    @settings(max_examples=30)
    @given(st.integers(0, 2**31 - 1), st.floats(0.001, 10.0))
    def test_stays_in_unit_interval(self, seed, lr):
        rng = np.random.default_rng(seed)
        latent = LatentWeights(
            KernelTensor(rng.uniform(-1, 1, (3, 3, 3, 3))), build_mask(3, 3, 3, 3))
        for _ in range(5):
            grad = KernelTensor(rng.uniform(-3, 3, (3, 3, 3, 3)))
            latent = bc_update(latent, grad, lr)
            assert np.all(np.abs(latent.weights.data) <= 1.0)


def single_conv_net(kernel="3x3", maps=64, width=32):
    return NetworkConfig((LayerSpec("conv", kernel, width, maps, maps, P=16),))


class TestFootprint:
    def test_reference_case(self):
        net = single_conv_net()
        # 9*64*64 weights at 4 bytes; 64*64 kept bits
        assert memory_footprint(net, FULL32) == 147456
        assert memory_footprint(net, PRUNED_BC) == 512
        assert memory_footprint(net, FULL32) / memory_footprint(net, PRUNED_BC) == 288

    def test_bc_factor_is_32(self):
        for kernel in ("3x3", "1x1"):
            net = single_conv_net(kernel)
            assert memory_footprint(net, FULL32) / memory_footprint(net, BC) == 32

    @given(st.sampled_from([8, 16, 24, 32, 64]), st.sampled_from([8, 16, 32, 128]))
    def test_pruned_identity_for_3x3_nets(self, k, l):
        net = NetworkConfig((LayerSpec("c", "3x3", 16, k, l),))
        assert memory_footprint(net, PRUNED_BC) * 9 * 32 == memory_footprint(net, FULL32)

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            memory_footprint(single_conv_net(), "int8")
