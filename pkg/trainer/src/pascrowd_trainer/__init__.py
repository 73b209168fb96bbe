"""Trainer package for the crowd simulator: occlusion-inference VAEs and recurrent PPO."""
